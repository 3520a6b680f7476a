#include <fstream>
#include <memory>
#include <string>

#include "commands.hpp"
#include "m6/evalgen.hpp"
#include "m6/rng.hpp"

namespace m6::cli {

namespace {

void write_result(const std::string& out, const evalgen::EvalResult& res,
                  std::string_view command, const nlohmann::ordered_json& args) {
  std::ofstream f(out, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + out);
  f << evalgen::result_json(res).dump(2) << "\n";
  write_manifest(manifest_for_file(out), command, args);
  std::printf("%s: %s %.6f over %zu items\n", std::string(command).c_str(),
              res.metric.c_str(), res.value, res.n);
}

struct TnewsOpts {
  std::string model;
  std::string data;
  std::uint64_t seed = 42;
  std::string out;
};

void run_eval_tnews(const TnewsOpts& o) {
  LoadedModel lm = load_model_dir(o.model);
  std::vector<evalgen::TnewsItem> items = evalgen::load_tnews(o.data);
  evalgen::EvalResult res = evalgen::eval_tnews(
      items, lm.vocab, evalgen::model_scorer(lm.params), o.seed);

  nlohmann::ordered_json args;
  args["model"] = o.model;
  args["data"] = o.data;
  args["seed"] = o.seed;
  args["out"] = o.out;
  write_result(o.out, res, "eval-tnews", args);
}

struct ChidOpts {
  std::string model;
  std::string data;
  std::string out;
};

void run_eval_chid(const ChidOpts& o) {
  LoadedModel lm = load_model_dir(o.model);
  std::vector<evalgen::ChidItem> items = evalgen::load_chid(o.data);
  evalgen::EvalResult res =
      evalgen::eval_chid(items, lm.vocab, evalgen::model_scorer(lm.params));

  nlohmann::ordered_json args;
  args["model"] = o.model;
  args["data"] = o.data;
  args["out"] = o.out;
  write_result(o.out, res, "eval-chid", args);
}

struct CmrcOpts {
  std::string model;
  std::string data;
  std::size_t max_new = 32;
  std::string out;
};

void run_eval_cmrc(const CmrcOpts& o) {
  LoadedModel lm = load_model_dir(o.model);
  std::vector<evalgen::CmrcItem> items = evalgen::load_cmrc(o.data);
  evalgen::EvalResult res = evalgen::eval_cmrc(
      items, lm.vocab, evalgen::model_step_fn(lm.params), o.max_new);

  nlohmann::ordered_json args;
  args["model"] = o.model;
  args["data"] = o.data;
  args["max_new"] = o.max_new;
  args["out"] = o.out;
  write_result(o.out, res, "eval-cmrc", args);
}

}  // namespace

void register_eval(CLI::App& app) {
  auto topts = std::make_shared<TnewsOpts>();
  CLI::App* tnews = app.add_subcommand("eval-tnews",
                                       "Zero-shot news classification");
  tnews->add_option("--model", topts->model, "Checkpoint directory")->required();
  tnews->add_option("--data", topts->data, "Task JSONL")->required();
  tnews->add_option("--seed", topts->seed, "Negative-sampling seed");
  tnews->add_option("--out", topts->out, "Results JSON")->required();
  tnews->callback([topts] { run_eval_tnews(*topts); });

  auto copts = std::make_shared<ChidOpts>();
  CLI::App* chid = app.add_subcommand("eval-chid", "Zero-shot idiom cloze");
  chid->add_option("--model", copts->model, "Checkpoint directory")->required();
  chid->add_option("--data", copts->data, "Task JSONL")->required();
  chid->add_option("--out", copts->out, "Results JSON")->required();
  chid->callback([copts] { run_eval_chid(*copts); });

  auto mopts = std::make_shared<CmrcOpts>();
  CLI::App* cmrc = app.add_subcommand("eval-cmrc",
                                      "Zero-shot reading comprehension");
  cmrc->add_option("--model", mopts->model, "Checkpoint directory")->required();
  cmrc->add_option("--data", mopts->data, "Task JSONL")->required();
  cmrc->add_option("--max-new", mopts->max_new, "Answer token budget");
  cmrc->add_option("--out", mopts->out, "Results JSON")->required();
  cmrc->callback([mopts] { run_eval_cmrc(*mopts); });
}

}  // namespace m6::cli
