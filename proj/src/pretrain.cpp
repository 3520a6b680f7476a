#include "m6/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "m6/tokenizer.hpp"

namespace m6::pretrain {

namespace {

std::vector<int> bos_prefixed(std::span<const int> tokens) {
  std::vector<int> out;
  out.reserve(tokens.size() + 1);
  out.push_back(tok::BOS);
  out.insert(out.end(), tokens.begin(), tokens.end());
  return out;
}

/// Next-token targets over the causal segment (original tokens then
/// EOS), ignore everywhere else.
std::vector<int> full_targets(std::size_t n_visual, std::size_t n_masked,
                              std::span<const int> tokens) {
  std::vector<int> t(n_visual + n_masked + tokens.size() + 1, kIgnoreId);
  std::size_t base = n_visual + n_masked;
  for (std::size_t i = 0; i < tokens.size(); ++i) t[base + i] = tokens[i];
  t[base + tokens.size()] = tok::EOS;
  return t;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

const char* task_name(Task t) {
  switch (t) {
    case Task::denoise: return "denoise";
    case Task::lm: return "lm";
    case Task::caption: return "caption";
    case Task::mm_denoise: return "mm_denoise";
  }
  throw std::logic_error("task_name: bad enum");
}

model::MultimodalSample make_denoising_span(std::span<const int> tokens,
                                            std::size_t start,
                                            std::size_t span_len) {
  if (tokens.size() < 2)
    throw std::invalid_argument("denoising needs at least 2 tokens");
  if (span_len == 0 || start + span_len > tokens.size())
    throw std::invalid_argument("denoising span out of range");
  model::MultimodalSample s;
  s.masked_ids.reserve(tokens.size() - span_len + 1);
  s.masked_ids.assign(tokens.begin(), tokens.begin() + start);
  s.masked_ids.push_back(tok::MASK);
  s.masked_ids.insert(s.masked_ids.end(), tokens.begin() + start + span_len,
                      tokens.end());
  s.causal_ids = bos_prefixed(tokens);
  s.targets = full_targets(0, s.masked_ids.size(), tokens);
  s.task = task_name(Task::denoise);
  return s;
}

namespace {

std::pair<std::size_t, std::size_t> draw_span(std::size_t len,
                                              const DenoiseConfig& cfg,
                                              Rng& rng) {
  if (!(cfg.mask_ratio > 0.0 && cfg.mask_ratio < 1.0))
    throw std::invalid_argument("mask_ratio must be inside (0,1)");
  auto span = static_cast<std::size_t>(std::max<long long>(
      1, std::llround(cfg.mask_ratio * static_cast<double>(len))));
  if (span > len) span = len;
  std::size_t start = rng.randint(len - span + 1);
  return {start, span};
}

}  // namespace

model::MultimodalSample make_denoising(std::span<const int> tokens,
                                       const DenoiseConfig& cfg, Rng& rng) {
  if (tokens.size() < 2)
    throw std::invalid_argument("denoising needs at least 2 tokens");
  auto [start, span] = draw_span(tokens.size(), cfg, rng);
  return make_denoising_span(tokens, start, span);
}

model::MultimodalSample make_lm(std::span<const int> tokens) {
  if (tokens.empty())
    throw std::invalid_argument("language modelling needs at least 1 token");
  model::MultimodalSample s;
  s.causal_ids = bos_prefixed(tokens);
  s.targets = full_targets(0, 0, tokens);
  s.task = task_name(Task::lm);
  return s;
}

model::MultimodalSample make_caption(const Tensor& patches,
                                     std::span<const int> tokens) {
  if (!patches.defined() || patches.ndim() != 2 || patches.dim(0) == 0)
    throw std::invalid_argument("caption sample needs a nonempty patch grid");
  if (tokens.empty())
    throw std::invalid_argument("caption sample needs a nonempty caption");
  model::MultimodalSample s;
  s.patches = patches;
  s.causal_ids = bos_prefixed(tokens);
  s.targets = full_targets(patches.dim(0), 0, tokens);
  s.task = task_name(Task::caption);
  return s;
}

model::MultimodalSample make_mm_denoise(const Tensor& patches,
                                        std::span<const int> tokens,
                                        const DenoiseConfig& cfg, Rng& rng) {
  if (!patches.defined() || patches.ndim() != 2 || patches.dim(0) == 0)
    throw std::invalid_argument("sample needs a nonempty patch grid");
  if (tokens.size() < 2)
    throw std::invalid_argument("denoising needs at least 2 tokens");
  auto [start, span] = draw_span(tokens.size(), cfg, rng);
  model::MultimodalSample s = make_denoising_span(tokens, start, span);
  s.patches = patches;
  s.targets = full_targets(patches.dim(0), s.masked_ids.size(), tokens);
  s.task = task_name(Task::mm_denoise);
  return s;
}

Task sample_task(std::span<const double> weights, Rng& rng) {
  if (weights.size() != kNumTasks)
    throw std::invalid_argument("need one weight per task");
  return static_cast<Task>(rng.sample_discrete(weights));
}

Batch make_batch(std::span<const model::MultimodalSample> raw) {
  if (raw.empty()) throw std::invalid_argument("empty batch");
  std::size_t t_max = 0;
  for (const auto& s : raw) t_max = std::max(t_max, s.layout().total());

  Batch batch;
  for (const auto& s : raw) {
    model::MultimodalSample padded = s;
    std::size_t real = s.layout().total();
    padded.causal_ids.resize(s.causal_ids.size() + (t_max - real), tok::PAD);
    padded.targets.resize(t_max, kIgnoreId);
    model::AttentionMask mask = model::build_mask(padded.layout());
    // padding keys are invisible; a padding row keeps itself so its
    // softmax still has one allowed entry
    for (std::size_t i = 0; i < t_max; ++i)
      for (std::size_t j = real; j < t_max; ++j)
        if (j != i) mask.set(i, j, false);
    batch.samples.push_back(std::move(padded));
    batch.masks.push_back(std::move(mask));
  }
  return batch;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"model", c.model},
                     {"task_weights", c.task_weights},
                     {"mask_ratio", c.denoise.mask_ratio},
                     {"lr", c.lr},
                     {"grad_clip", c.grad_clip},
                     {"steps", c.steps},
                     {"batch_size", c.batch_size},
                     {"warmup_steps", c.warmup_steps},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (j.contains("model")) c.model = j.at("model").get<model::ModelConfig>();
  if (j.contains("task_weights"))
    c.task_weights = j.at("task_weights").get<std::array<double, kNumTasks>>();
  c.denoise.mask_ratio = j.value("mask_ratio", c.denoise.mask_ratio);
  c.lr = j.value("lr", c.lr);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.seed = j.value("seed", c.seed);
}

Trainer::Trainer(model::Parameters params, TrainConfig cfg, Dataset data)
    : params_(std::move(params)),
      cfg_(std::move(cfg)),
      data_(std::move(data)),
      rng_(cfg_.seed),
      adam_(params_.all(),
            AdamConfig{.lr = cfg_.lr, .grad_clip = cfg_.grad_clip}) {
  if (cfg_.batch_size == 0)
    throw std::invalid_argument("batch_size must be positive");
  for (std::size_t i = 0; i < data_.texts.size(); ++i)
    if (data_.texts[i].size() >= 2) denoise_texts_.push_back(i);
  for (std::size_t i = 0; i < data_.pairs.size(); ++i)
    if (data_.pairs[i].caption.size() >= 2) denoise_pairs_.push_back(i);

  // Town planning for max_len: a drawn text is truncated to the task's
  // budget, so the worst layout each task can emit must fit. Fail here,
  // not steps into a run.
  std::size_t max_p = 0;
  for (const auto& p : data_.pairs)
    max_p = std::max(max_p, p.patches.dim(0));
  auto require_fit = [&](Task t, bool has_data, std::size_t min_rows) {
    if (cfg_.task_weights[static_cast<std::size_t>(t)] > 0.0 && has_data &&
        cfg_.model.max_len < min_rows)
      throw std::invalid_argument(
          "max_len " + std::to_string(cfg_.model.max_len) +
          " cannot fit a minimal " + task_name(t) + " sample (needs " +
          std::to_string(min_rows) + " rows)");
  };
  require_fit(Task::denoise, !denoise_texts_.empty(), 5);
  require_fit(Task::lm, !data_.texts.empty(), 2);
  require_fit(Task::caption, !data_.pairs.empty(), max_p + 2);
  require_fit(Task::mm_denoise, !denoise_pairs_.empty(), max_p + 5);
}

Task Trainer::draw_task() {
  auto available = [&](Task t) {
    switch (t) {
      case Task::denoise: return !denoise_texts_.empty();
      case Task::lm: return !data_.texts.empty();
      case Task::caption: return !data_.pairs.empty();
      case Task::mm_denoise: return !denoise_pairs_.empty();
    }
    return false;
  };
  bool any = false;
  for (std::size_t i = 0; i < kNumTasks; ++i)
    if (cfg_.task_weights[i] > 0.0 && available(static_cast<Task>(i)))
      any = true;
  if (!any)
    throw std::runtime_error(
        "dataset has no data for any task with positive weight");
  while (true) {
    Task t = sample_task(cfg_.task_weights, rng_);
    if (available(t)) return t;
    auto i = static_cast<std::size_t>(t);
    if (!warned_[i]) {
      warned_[i] = true;
      std::fprintf(stderr,
                   "warning: no data for task %s, drawing another task\n",
                   task_name(t));
    }
  }
}

namespace {

std::span<const int> clamp_len(std::span<const int> tokens,
                               std::size_t budget) {
  return tokens.subspan(0, std::min(tokens.size(), budget));
}

}  // namespace

model::MultimodalSample Trainer::draw_sample(Task t) {
  // Budgets invert the row counts the constructors produce: lm lays out
  // L+1 rows, denoising at worst (span 1) 2L+1, and the paired tasks add
  // the patch rows on top. Construction already checked the minima.
  std::size_t m = cfg_.model.max_len;
  switch (t) {
    case Task::denoise: {
      const auto& txt = data_.texts[denoise_texts_[rng_.randint(
          denoise_texts_.size())]];
      return make_denoising(clamp_len(txt, (m - 1) / 2), cfg_.denoise, rng_);
    }
    case Task::lm: {
      const auto& txt = data_.texts[rng_.randint(data_.texts.size())];
      return make_lm(clamp_len(txt, m - 1));
    }
    case Task::caption: {
      const auto& p = data_.pairs[rng_.randint(data_.pairs.size())];
      return make_caption(p.patches,
                          clamp_len(p.caption, m - p.patches.dim(0) - 1));
    }
    case Task::mm_denoise: {
      const auto& p =
          data_.pairs[denoise_pairs_[rng_.randint(denoise_pairs_.size())]];
      return make_mm_denoise(p.patches,
                             clamp_len(p.caption, (m - p.patches.dim(0) - 1) / 2),
                             cfg_.denoise, rng_);
    }
  }
  throw std::logic_error("draw_sample: bad task");
}

StepInfo Trainer::step() {
  Task t = draw_task();
  std::vector<model::MultimodalSample> raw;
  raw.reserve(cfg_.batch_size);
  for (std::size_t b = 0; b < cfg_.batch_size; ++b) raw.push_back(draw_sample(t));
  Batch batch = make_batch(raw);

  StepInfo info;
  info.task = t;
  Tensor ce_sum, aux_sum;
  for (std::size_t b = 0; b < batch.samples.size(); ++b) {
    model::ForwardResult fr =
        model::forward(batch.samples[b], params_, &batch.masks[b]);
    Tensor ce = cross_entropy(fr.logits, batch.samples[b].targets);
    ce_sum = ce_sum.defined() ? add(ce_sum, ce) : ce;
    aux_sum = aux_sum.defined() ? add(aux_sum, fr.aux_loss) : fr.aux_loss;
    info.drop_rate += fr.stats.drop_rate;
    if (info.expert_load.size() < fr.stats.expert_load.size())
      info.expert_load.resize(fr.stats.expert_load.size());
    for (std::size_t e = 0; e < fr.stats.expert_load.size(); ++e)
      info.expert_load[e] += fr.stats.expert_load[e];
  }
  double inv_b = 1.0 / static_cast<double>(batch.samples.size());
  Tensor ce_mean = scale(ce_sum, inv_b);
  Tensor aux_mean = scale(aux_sum, inv_b);
  Tensor total = add(ce_mean, scale(aux_mean, cfg_.model.aux_loss_coef));

  adam_.zero_grad();
  backward(total);
  double ramp = cfg_.warmup_steps == 0
                    ? 1.0
                    : std::min(1.0, static_cast<double>(step_ + 1) /
                                        static_cast<double>(cfg_.warmup_steps));
  adam_.set_lr(cfg_.lr * ramp);
  adam_.step();

  info.step = step_;
  info.loss = ce_mean.item();
  info.aux_loss = aux_mean.item();
  info.drop_rate *= inv_b;
  ++step_;
  return info;
}

std::vector<StepInfo> run_training(Trainer& trainer, std::size_t steps,
                                   std::ostream* metrics,
                                   std::ostream* expert_log) {
  if (metrics != nullptr) *metrics << "step,task,loss,aux_loss,drop_rate\n";
  std::vector<StepInfo> history;
  history.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    StepInfo info = trainer.step();
    if (metrics != nullptr) {
      *metrics << info.step << ',' << task_name(info.task) << ','
               << fmt_double(info.loss) << ',' << fmt_double(info.aux_loss)
               << ',' << fmt_double(info.drop_rate) << "\n";
    }
    if (expert_log != nullptr && !info.expert_load.empty()) {
      *expert_log << info.step;
      for (std::size_t n : info.expert_load) *expert_log << ' ' << n;
      *expert_log << "\n";
    }
    history.push_back(std::move(info));
  }
  return history;
}

}  // namespace m6::pretrain
