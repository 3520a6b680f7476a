#include <fstream>
#include <memory>
#include <string>

#include "commands.hpp"
#include "m6/evalgen.hpp"
#include "m6/image.hpp"
#include "m6/patches.hpp"
#include "m6/rng.hpp"
#include "m6/vq.hpp"

namespace m6::cli {

namespace {

void maybe_write_text(const std::string& out, const std::string& text,
                      std::string_view command,
                      const nlohmann::ordered_json& args) {
  if (out.empty()) return;
  std::ofstream f(out, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + out);
  f << text << "\n";
  write_manifest(manifest_for_file(out), command, args);
}

struct CaptionOpts {
  std::string model;
  std::string image;
  std::size_t beam = 5;
  std::size_t max_new = 32;
  int image_side = 32;
  std::string out;
};

void run_caption(const CaptionOpts& o) {
  LoadedModel lm = load_model_dir(o.model);
  img::Image image = img::load_and_resize(o.image, o.image_side);
  patches::RawPatches raw = patches::split_patches(image, 8);

  model::MultimodalSample base;
  base.patches = raw.values;
  evalgen::StepFn step = evalgen::model_step_fn(lm.params, base);

  evalgen::DecodeConfig cfg;
  cfg.strategy = evalgen::Strategy::beam;
  cfg.beam_size = o.beam;
  cfg.max_new_tokens = o.max_new;
  Rng rng(0);
  std::vector<int> prefix{tok::BOS};
  std::vector<int> gen = evalgen::decode(step, prefix, cfg, rng);
  std::string text = tok::decode(gen, lm.vocab);

  nlohmann::ordered_json args;
  args["model"] = o.model;
  args["image"] = o.image;
  args["beam"] = o.beam;
  args["max_new"] = o.max_new;
  args["image_side"] = o.image_side;
  args["out"] = o.out;
  maybe_write_text(o.out, text, "caption", args);
  std::printf("%s\n", text.c_str());
}

struct T2iSampleOpts {
  std::string model;
  std::string vq;
  std::string text;
  std::size_t k = 8;
  double temp = 1.0;
  std::uint64_t seed = 42;
  std::string out;
};

void run_t2i_sample(const T2iSampleOpts& o) {
  LoadedModel lm = load_model_dir(o.model);
  vq::VqModel vqm = vq::VqModel::load(o.vq);
  std::size_t text_vocab = static_cast<std::size_t>(lm.vocab.size());
  if (lm.params.cfg.vocab_size != text_vocab + vqm.cfg.codebook_size)
    throw std::runtime_error(
        "t2i-sample: model vocab does not match text vocab + codebook");

  std::vector<int> ids = tok::encode(o.text, lm.vocab);
  Rng rng(o.seed);
  img::Image image = vq::generate_image(vqm, lm.params, ids, text_vocab, o.k,
                                        o.temp, rng);
  img::write_ppm(o.out, image);

  nlohmann::ordered_json args;
  args["model"] = o.model;
  args["vq"] = o.vq;
  args["text"] = o.text;
  args["k"] = o.k;
  args["temp"] = o.temp;
  args["seed"] = o.seed;
  args["out"] = o.out;
  write_manifest(manifest_for_file(o.out), "t2i-sample", args);
  std::printf("t2i-sample: wrote %s (%dx%d)\n", o.out.c_str(), image.width,
              image.height);
}

struct PoemOpts {
  std::string model;
  std::string title;
  std::size_t line_len = 5;
  std::size_t min_lines = 4;
  std::size_t max_lines = 16;
  std::size_t k = 8;
  double temp = 1.0;
  std::uint64_t seed = 42;
  std::size_t retries = 8;
  std::string out;
};

void run_poem(const PoemOpts& o) {
  LoadedModel lm = load_model_dir(o.model);
  evalgen::StepFn step = evalgen::model_step_fn(lm.params);
  evalgen::PoemConstraint c;
  c.line_len = o.line_len;
  c.min_lines = o.min_lines;
  c.max_lines = o.max_lines;
  Rng rng(o.seed);
  std::optional<std::vector<std::string>> lines = evalgen::poem_generate(
      step, lm.vocab, o.title, c, o.k, o.temp, rng, o.retries);
  if (!lines) throw std::runtime_error("poem: generation failed under constraints");
  std::string text = evalgen::render_poem(*lines);

  nlohmann::ordered_json args;
  args["model"] = o.model;
  args["title"] = o.title;
  args["line_len"] = o.line_len;
  args["min_lines"] = o.min_lines;
  args["max_lines"] = o.max_lines;
  args["k"] = o.k;
  args["temp"] = o.temp;
  args["seed"] = o.seed;
  args["out"] = o.out;
  maybe_write_text(o.out, text, "poem", args);
  std::printf("%s\n", text.c_str());
}

struct QaOpts {
  std::string model;
  std::string question;
  std::string context;
  std::string image;
  std::size_t max_new = 32;
  int image_side = 32;
  std::string out;
};

void run_qa(const QaOpts& o) {
  LoadedModel lm = load_model_dir(o.model);
  model::MultimodalSample base;
  std::string prompt;
  if (!o.image.empty()) {
    img::Image image = img::load_and_resize(o.image, o.image_side);
    base.patches = patches::split_patches(image, 8).values;
    prompt = evalgen::vqa_prompt(o.question);
  } else if (!o.context.empty()) {
    prompt = o.context + "问题:" + evalgen::qa_prompt(o.question);
  } else {
    prompt = evalgen::qa_prompt(o.question);
  }

  evalgen::StepFn step = evalgen::model_step_fn(lm.params, base);
  std::vector<int> ids{tok::BOS};
  std::vector<int> body = tok::encode(prompt, lm.vocab);
  ids.insert(ids.end(), body.begin(), body.end());

  evalgen::DecodeConfig cfg;
  cfg.strategy = evalgen::Strategy::greedy;
  cfg.max_new_tokens = o.max_new;
  Rng rng(0);
  std::vector<int> gen = evalgen::decode(step, ids, cfg, rng);
  std::string text = tok::decode(gen, lm.vocab);

  nlohmann::ordered_json args;
  args["model"] = o.model;
  args["question"] = o.question;
  args["context"] = o.context;
  args["image"] = o.image;
  args["max_new"] = o.max_new;
  args["out"] = o.out;
  maybe_write_text(o.out, text, "qa", args);
  std::printf("%s\n", text.c_str());
}

}  // namespace

void register_generate(CLI::App& app) {
  auto copts = std::make_shared<CaptionOpts>();
  CLI::App* cap = app.add_subcommand("caption", "Describe an image");
  cap->add_option("--model", copts->model, "Checkpoint directory")->required();
  cap->add_option("--image", copts->image, "Input image (.ppm/.png)")->required();
  cap->add_option("--beam", copts->beam, "Beam width");
  cap->add_option("--max-new", copts->max_new, "Token budget");
  cap->add_option("--image-side", copts->image_side, "Resize side");
  cap->add_option("--out", copts->out, "Also write the caption here");
  cap->callback([copts] { run_caption(*copts); });

  auto topts = std::make_shared<T2iSampleOpts>();
  CLI::App* t2i = app.add_subcommand("t2i-sample", "Generate an image from text");
  t2i->add_option("--model", topts->model, "Code LM checkpoint")->required();
  t2i->add_option("--vq", topts->vq, "Autoencoder directory")->required();
  t2i->add_option("--text", topts->text, "Prompt text")->required();
  t2i->add_option("--k", topts->k, "Top-k cutoff");
  t2i->add_option("--temp", topts->temp, "Sampling temperature");
  t2i->add_option("--seed", topts->seed, "Sampling seed");
  t2i->add_option("--out", topts->out, "Output .ppm")->required();
  t2i->callback([topts] { run_t2i_sample(*topts); });

  auto popts = std::make_shared<PoemOpts>();
  CLI::App* poem = app.add_subcommand("poem", "Constrained classical poem");
  poem->add_option("--model", popts->model, "Checkpoint directory")->required();
  poem->add_option("--title", popts->title, "Poem title / theme")->required();
  poem->add_option("--line-len", popts->line_len, "Characters per line (5 or 7)");
  poem->add_option("--min-lines", popts->min_lines, "Minimum lines (even)");
  poem->add_option("--max-lines", popts->max_lines, "Maximum lines (even)");
  poem->add_option("--k", popts->k, "Top-k cutoff");
  poem->add_option("--temp", popts->temp, "Sampling temperature");
  poem->add_option("--seed", popts->seed, "Sampling seed");
  poem->add_option("--retries", popts->retries, "Sampling attempts");
  poem->add_option("--out", popts->out, "Also write the poem here");
  poem->callback([popts] { run_poem(*popts); });

  auto qopts = std::make_shared<QaOpts>();
  CLI::App* qa = app.add_subcommand("qa", "Free-form question answering");
  qa->add_option("--model", qopts->model, "Checkpoint directory")->required();
  qa->add_option("--question", qopts->question, "Question text")->required();
  qa->add_option("--context", qopts->context, "Optional passage to condition on");
  qa->add_option("--image", qopts->image, "Optional image for visual QA");
  qa->add_option("--max-new", qopts->max_new, "Token budget");
  qa->add_option("--out", qopts->out, "Also write the answer here");
  qa->callback([qopts] { run_qa(*qopts); });
}

}  // namespace m6::cli
