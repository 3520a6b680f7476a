#include <algorithm>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "commands.hpp"
#include "m6/image.hpp"
#include "m6/patches.hpp"
#include "m6/pretrain.hpp"
#include "m6/rng.hpp"
#include "m6/vq.hpp"

namespace m6::cli {

namespace {

std::filesystem::path resolve_near(const std::filesystem::path& base_file,
                                   const std::string& path) {
  std::filesystem::path p(path);
  if (p.is_absolute()) return p;
  return base_file.parent_path() / p;
}

/// Clean JSONL (or plain text lines) -> encoded pretraining dataset.
/// Paired records become caption pairs; images are resized to
/// image_side and cut into patches matching the model's patch_dim.
pretrain::Dataset build_dataset(const std::filesystem::path& data_file,
                                const tok::Vocab& vocab, int image_side,
                                int patch) {
  pretrain::Dataset ds;
  for (const DataLine& d : load_data_lines(data_file)) {
    std::vector<int> ids = d.text.empty() ? std::vector<int>{}
                                          : tok::encode(d.text, vocab);
    if (d.image_path.empty()) {
      if (!ids.empty()) ds.texts.push_back(std::move(ids));
      continue;
    }
    if (ids.empty()) continue;
    img::Image image =
        img::load_and_resize(resolve_near(data_file, d.image_path), image_side);
    patches::RawPatches raw = patches::split_patches(image, patch);
    ds.pairs.push_back({raw.values, std::move(ids)});
  }
  return ds;
}

void save_checkpoint(const model::Parameters& params, const tok::Vocab& vocab,
                     const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  params.save(out);
  vocab.save((out / "vocab.txt").string());
}

struct PretrainOpts {
  std::string config;
  std::string data;
  std::string vocab;
  std::string out;
  std::size_t steps = 0;   // 0: use config value
  long long seed = -1;     // <0: use config value
  int image_side = 32;
};

void run_pretrain(const PretrainOpts& o) {
  std::ifstream cf(o.config, std::ios::binary);
  if (!cf) throw std::runtime_error("cannot open " + o.config);
  pretrain::TrainConfig cfg = nlohmann::json::parse(cf).get<pretrain::TrainConfig>();
  if (o.steps > 0) cfg.steps = o.steps;
  if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);

  tok::Vocab vocab = tok::Vocab::load(o.vocab);
  cfg.model.vocab_size = static_cast<std::size_t>(vocab.size());
  cfg.model.validate();

  int patch_side = 8;  // patch_dim = side*side*3
  if (cfg.model.patch_dim != 192)
    throw std::runtime_error("pretrain: only patch_dim 192 (8x8 RGB) is wired up");
  pretrain::Dataset ds = build_dataset(o.data, vocab, o.image_side, patch_side);

  Rng rng(cfg.seed);
  model::Parameters params = model::Parameters::init(cfg.model, rng);
  pretrain::Trainer trainer(std::move(params), cfg, std::move(ds));

  std::filesystem::create_directories(o.out);
  std::ofstream metrics(std::filesystem::path(o.out) / "metrics.csv",
                        std::ios::binary);
  std::ofstream expert_log;
  std::ostream* expert_ptr = nullptr;
  if (cfg.model.n_experts > 1) {
    expert_log.open(std::filesystem::path(o.out) / "expert_load.csv",
                    std::ios::binary);
    expert_ptr = &expert_log;
  }
  std::vector<pretrain::StepInfo> history =
      pretrain::run_training(trainer, cfg.steps, &metrics, expert_ptr);

  save_checkpoint(trainer.params(), vocab, o.out);

  nlohmann::ordered_json args;
  args["config_path"] = o.config;
  args["config"] = nlohmann::json(cfg);
  args["data"] = o.data;
  args["vocab"] = o.vocab;
  args["out"] = o.out;
  args["seed"] = cfg.seed;
  args["image_side"] = o.image_side;
  write_manifest(std::filesystem::path(o.out) / "manifest.json", "pretrain", args);

  if (!history.empty())
    std::printf("pretrain: %zu steps, final loss %.6f\n", history.size(),
                history.back().loss);
}

struct FinetuneOpts {
  std::string model;
  std::string data;
  std::string out;
  std::size_t steps = 300;
  std::size_t batch_size = 8;
  double lr = 1e-3;
  std::uint64_t seed = 42;
  int image_side = 32;
};

void run_finetune_caption(const FinetuneOpts& o) {
  LoadedModel lm = load_model_dir(o.model);

  pretrain::TrainConfig cfg;
  cfg.model = lm.params.cfg;
  cfg.task_weights = {0.0, 0.0, 1.0, 0.0};  // caption only
  cfg.lr = o.lr;
  cfg.steps = o.steps;
  cfg.batch_size = o.batch_size;
  cfg.warmup_steps = std::max<std::size_t>(1, o.steps / 10);
  cfg.seed = o.seed;

  pretrain::Dataset ds = build_dataset(o.data, lm.vocab, o.image_side, 8);
  if (ds.pairs.empty())
    throw std::runtime_error("finetune-caption: no image/text pairs in " + o.data);

  pretrain::Trainer trainer(std::move(lm.params), cfg, std::move(ds));
  std::filesystem::create_directories(o.out);
  std::ofstream metrics(std::filesystem::path(o.out) / "metrics.csv",
                        std::ios::binary);
  std::vector<pretrain::StepInfo> history =
      pretrain::run_training(trainer, cfg.steps, &metrics, nullptr);

  save_checkpoint(trainer.params(), lm.vocab, o.out);

  nlohmann::ordered_json args;
  args["model"] = o.model;
  args["data"] = o.data;
  args["out"] = o.out;
  args["config"] = nlohmann::json(cfg);
  args["seed"] = o.seed;
  args["image_side"] = o.image_side;
  write_manifest(std::filesystem::path(o.out) / "manifest.json",
                 "finetune-caption", args);

  if (!history.empty())
    std::printf("finetune-caption: %zu steps, final loss %.6f\n", history.size(),
                history.back().loss);
}

std::vector<img::Image> load_image_dir(const std::filesystem::path& dir,
                                       int side) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    if (ext == ".ppm" || ext == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw std::runtime_error("no .ppm/.png images in " + dir.string());
  std::vector<img::Image> out;
  for (const auto& f : files) out.push_back(img::load_and_resize(f, side));
  return out;
}

struct VqTrainOpts {
  std::string config;
  std::string images;
  std::string out;
  std::size_t steps = 500;
  double lr = 1e-3;
  std::uint64_t seed = 42;
};

void run_t2i_train_vq(const VqTrainOpts& o) {
  vq::VqConfig cfg;
  if (!o.config.empty()) {
    std::ifstream cf(o.config, std::ios::binary);
    if (!cf) throw std::runtime_error("cannot open " + o.config);
    cfg = nlohmann::json::parse(cf).get<vq::VqConfig>();
  }
  cfg.validate();

  std::vector<img::Image> images =
      load_image_dir(o.images, static_cast<int>(cfg.image_side));
  Rng rng(o.seed);
  vq::VqModel m = vq::VqModel::init(cfg, rng);
  std::vector<vq::VqLosses> losses = vq::train_vq(m, images, o.steps, o.lr);

  std::filesystem::create_directories(o.out);
  m.save(o.out);
  std::ofstream lf(std::filesystem::path(o.out) / "losses.csv", std::ios::binary);
  lf << "step,recon,codebook,commit,total\n";
  for (std::size_t i = 0; i < losses.size(); ++i) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g\n", i,
                  losses[i].recon, losses[i].codebook, losses[i].commit,
                  losses[i].total);
    lf << buf;
  }

  nlohmann::ordered_json args;
  args["config"] = nlohmann::json(cfg);
  args["images"] = o.images;
  args["out"] = o.out;
  args["steps"] = o.steps;
  args["lr"] = o.lr;
  args["seed"] = o.seed;
  write_manifest(std::filesystem::path(o.out) / "manifest.json", "t2i-train-vq",
                 args);
  if (!losses.empty())
    std::printf("t2i-train-vq: %zu steps, final recon %.6f\n", losses.size(),
                losses.back().recon);
}

struct T2iLmOpts {
  std::string vq;
  std::string vocab;
  std::string data;
  std::string config;
  std::string out;
  std::size_t steps = 500;
  std::size_t batch_size = 4;
  double lr = 1e-3;
  std::uint64_t seed = 42;
};

void run_t2i_train_lm(const T2iLmOpts& o) {
  vq::VqModel vqm = vq::VqModel::load(o.vq);
  tok::Vocab vocab = tok::Vocab::load(o.vocab);
  std::size_t text_vocab = static_cast<std::size_t>(vocab.size());

  model::ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 64;
  cfg.n_heads = 4;
  cfg.n_experts = 1;
  cfg.max_len = 128;
  if (!o.config.empty()) {
    std::ifstream cf(o.config, std::ios::binary);
    if (!cf) throw std::runtime_error("cannot open " + o.config);
    cfg = nlohmann::json::parse(cf).get<model::ModelConfig>();
  }
  cfg.vocab_size = text_vocab + vqm.cfg.codebook_size;
  cfg.validate();

  std::vector<model::MultimodalSample> samples;
  for (const DataLine& d : load_data_lines(o.data)) {
    if (d.text.empty() || d.image_path.empty()) continue;
    img::Image image = img::load_and_resize(resolve_near(o.data, d.image_path),
                                            static_cast<int>(vqm.cfg.image_side));
    vq::CodeGrid grid = vq::vq_encode(vqm, image);
    std::vector<int> ids = tok::encode(d.text, vocab);
    samples.push_back(vq::make_t2i_sample(ids, grid, text_vocab, cfg.max_len));
  }
  if (samples.empty())
    throw std::runtime_error("t2i-train-lm: no usable pairs in " + o.data);

  Rng rng(o.seed);
  model::Parameters params = model::Parameters::init(cfg, rng);
  std::vector<double> losses =
      vq::train_t2i(params, samples, o.steps, o.batch_size, o.lr, o.seed);

  save_checkpoint(params, vocab, o.out);
  std::ofstream lf(std::filesystem::path(o.out) / "losses.csv", std::ios::binary);
  lf << "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu,%.10g\n", i, losses[i]);
    lf << buf;
  }

  nlohmann::ordered_json args;
  args["vq"] = o.vq;
  args["vocab"] = o.vocab;
  args["data"] = o.data;
  args["config"] = nlohmann::json(cfg);
  args["out"] = o.out;
  args["steps"] = o.steps;
  args["batch_size"] = o.batch_size;
  args["lr"] = o.lr;
  args["seed"] = o.seed;
  write_manifest(std::filesystem::path(o.out) / "manifest.json", "t2i-train-lm",
                 args);
  if (!losses.empty())
    std::printf("t2i-train-lm: %zu steps, final loss %.6f\n", losses.size(),
                losses.back());
}

}  // namespace

void register_train(CLI::App& app) {
  auto popts = std::make_shared<PretrainOpts>();
  CLI::App* pre = app.add_subcommand("pretrain", "Multi-task pretraining");
  pre->add_option("--config", popts->config, "Training config JSON")->required();
  pre->add_option("--data", popts->data, "Clean JSONL or plain text")->required();
  pre->add_option("--vocab", popts->vocab, "Vocabulary file")->required();
  pre->add_option("--out", popts->out, "Checkpoint directory")->required();
  pre->add_option("--steps", popts->steps, "Override step count");
  pre->add_option("--seed", popts->seed, "Override seed");
  pre->add_option("--image-side", popts->image_side, "Resize images to this side");
  pre->callback([popts] { run_pretrain(*popts); });

  auto fopts = std::make_shared<FinetuneOpts>();
  CLI::App* fin = app.add_subcommand("finetune-caption",
                                     "Caption-only finetuning of a checkpoint");
  fin->add_option("--model", fopts->model, "Checkpoint directory")->required();
  fin->add_option("--data", fopts->data, "JSONL with image_path and text")->required();
  fin->add_option("--out", fopts->out, "Output checkpoint directory")->required();
  fin->add_option("--steps", fopts->steps, "Training steps");
  fin->add_option("--batch", fopts->batch_size, "Batch size");
  fin->add_option("--lr", fopts->lr, "Learning rate");
  fin->add_option("--seed", fopts->seed, "Sampling seed");
  fin->add_option("--image-side", fopts->image_side, "Resize images to this side");
  fin->callback([fopts] { run_finetune_caption(*fopts); });

  auto vopts = std::make_shared<VqTrainOpts>();
  CLI::App* vq = app.add_subcommand("t2i-train-vq",
                                    "Train the discrete image autoencoder");
  vq->add_option("--config", vopts->config, "Autoencoder config JSON");
  vq->add_option("--images", vopts->images, "Directory of training images")->required();
  vq->add_option("--out", vopts->out, "Output directory")->required();
  vq->add_option("--steps", vopts->steps, "Training steps");
  vq->add_option("--lr", vopts->lr, "Learning rate");
  vq->add_option("--seed", vopts->seed, "Init seed");
  vq->callback([vopts] { run_t2i_train_vq(*vopts); });

  auto topts = std::make_shared<T2iLmOpts>();
  CLI::App* t2i = app.add_subcommand("t2i-train-lm",
                                     "Train the text-to-code language model");
  t2i->add_option("--vq", topts->vq, "Trained autoencoder directory")->required();
  t2i->add_option("--vocab", topts->vocab, "Vocabulary file")->required();
  t2i->add_option("--data", topts->data, "JSONL with image_path and text")->required();
  t2i->add_option("--config", topts->config, "Model config JSON");
  t2i->add_option("--out", topts->out, "Checkpoint directory")->required();
  t2i->add_option("--steps", topts->steps, "Training steps");
  t2i->add_option("--batch", topts->batch_size, "Batch size");
  t2i->add_option("--lr", topts->lr, "Learning rate");
  t2i->add_option("--seed", topts->seed, "Seed");
  t2i->callback([topts] { run_t2i_train_lm(*topts); });
}

}  // namespace m6::cli
