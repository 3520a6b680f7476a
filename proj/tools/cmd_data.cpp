#include <fstream>
#include <memory>
#include <string>

#include "commands.hpp"
#include "m6/corpus.hpp"

namespace m6::cli {

namespace {

struct CleanOpts {
  std::string in;
  std::string out;
  std::string blocklist;
  std::string stats;
  std::string image_root;  // defaults to --in
};

void run_clean(const CleanOpts& o) {
  std::vector<corpus::RawDocument> docs = corpus::load_raw_dir(o.in);
  corpus::Blocklist block;
  if (!o.blocklist.empty()) block = corpus::Blocklist::load(o.blocklist);
  std::filesystem::path root = o.image_root.empty() ? o.in : o.image_root;

  corpus::PipelineResult res = corpus::run_pipeline(docs, block, root);
  corpus::write_jsonl(res.records, o.out);
  if (!o.stats.empty()) {
    corpus::CorpusStats st = corpus::compute_stats(res.records, root);
    std::ofstream sf(o.stats, std::ios::binary);
    if (!sf) throw std::runtime_error("cannot write " + o.stats);
    sf << corpus::stats_json(st).dump(2) << "\n";
  }

  nlohmann::ordered_json args;
  args["in"] = o.in;
  args["out"] = o.out;
  args["blocklist"] = o.blocklist;
  args["stats"] = o.stats;
  args["image_root"] = root.string();
  args["ppl_threshold"] = res.ppl_threshold;
  write_manifest(manifest_for_file(o.out), "clean", args);

  std::size_t kept = 0;
  for (const corpus::CleanRecord& r : res.records)
    if (r.reject == corpus::Reject::none) ++kept;
  std::printf("clean: %zu records (%zu accepted), ppl threshold %.6g\n",
              res.records.size(), kept, res.ppl_threshold);
}

struct VocabOpts {
  std::string in;
  std::string out;
  std::size_t size = 4000;
  std::size_t min_freq = 2;
};

void run_build_vocab(const VocabOpts& o) {
  std::vector<DataLine> lines = load_data_lines(o.in);
  std::vector<std::string> texts;
  for (DataLine& d : lines)
    if (!d.text.empty()) texts.push_back(std::move(d.text));
  if (texts.empty()) throw std::runtime_error("build-vocab: no text lines in " + o.in);

  tok::Vocab vocab = tok::build_vocab(texts, o.size, o.min_freq);
  vocab.save(o.out);

  nlohmann::ordered_json args;
  args["in"] = o.in;
  args["out"] = o.out;
  args["size"] = o.size;
  args["min_freq"] = o.min_freq;
  write_manifest(manifest_for_file(o.out), "build-vocab", args);
  std::printf("build-vocab: %d tokens\n", vocab.size());
}

}  // namespace

void register_data(CLI::App& app) {
  auto copts = std::make_shared<CleanOpts>();
  CLI::App* clean = app.add_subcommand("clean", "Filter raw documents into clean passages");
  clean->add_option("--in", copts->in, "Directory of raw .txt documents")->required();
  clean->add_option("--out", copts->out, "Output JSONL of clean records")->required();
  clean->add_option("--blocklist", copts->blocklist, "Blocklist file, one term per line");
  clean->add_option("--stats", copts->stats, "Write per-source statistics JSON here");
  clean->add_option("--image-root", copts->image_root,
                    "Directory image paths are relative to (default: --in)");
  clean->callback([copts] { run_clean(*copts); });

  auto vopts = std::make_shared<VocabOpts>();
  CLI::App* vocab = app.add_subcommand("build-vocab", "Build a subword vocabulary");
  vocab->add_option("--in", vopts->in, "Clean JSONL or plain text, one passage per line")
      ->required();
  vocab->add_option("--out", vopts->out, "Output vocab file")->required();
  vocab->add_option("--size", vopts->size, "Target vocabulary size");
  vocab->add_option("--min-freq", vopts->min_freq, "Minimum pair frequency for merges");
  vocab->callback([vopts] { run_build_vocab(*vopts); });
}

}  // namespace m6::cli
