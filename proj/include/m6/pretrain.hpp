#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "m6/model.hpp"
#include "m6/rng.hpp"
#include "m6/tensor.hpp"

namespace m6::pretrain {

enum class Task { denoise = 0, lm = 1, caption = 2, mm_denoise = 3 };
inline constexpr std::size_t kNumTasks = 4;
const char* task_name(Task t);

struct DenoiseConfig {
  double mask_ratio = 0.15;
};

/// Span replacement with a single mask token: the decoder must emit the
/// whole original sequence, which also forces it to recover the span
/// length. Deterministic variant used by tests; span indices are
/// zero-based and the span must fit inside the tokens.
model::MultimodalSample make_denoising_span(std::span<const int> tokens,
                                            std::size_t start,
                                            std::size_t span_len);
model::MultimodalSample make_denoising(std::span<const int> tokens,
                                       const DenoiseConfig& cfg, Rng& rng);
model::MultimodalSample make_lm(std::span<const int> tokens);
model::MultimodalSample make_caption(const Tensor& patches,
                                     std::span<const int> tokens);
model::MultimodalSample make_mm_denoise(const Tensor& patches,
                                        std::span<const int> tokens,
                                        const DenoiseConfig& cfg, Rng& rng);

/// Draws a task index proportionally to the weights.
Task sample_task(std::span<const double> weights, Rng& rng);

/// Samples padded to a common length: the causal segment is extended
/// with PAD (targets ignored there) and each sample keeps its own mask
/// in which padding rows see only themselves and real keys.
struct Batch {
  std::vector<model::MultimodalSample> samples;
  std::vector<model::AttentionMask> masks;
};
Batch make_batch(std::span<const model::MultimodalSample> raw);

struct CaptionPair {
  Tensor patches;  // [n, patch_dim]
  std::vector<int> caption;
};

struct Dataset {
  std::vector<std::vector<int>> texts;
  std::vector<CaptionPair> pairs;
};

struct TrainConfig {
  model::ModelConfig model;
  std::array<double, kNumTasks> task_weights{1.0, 1.0, 1.0, 1.0};
  DenoiseConfig denoise;
  double lr = 1e-3;
  double grad_clip = 1.0;
  std::size_t steps = 100;
  std::size_t batch_size = 8;
  std::size_t warmup_steps = 100;
  std::uint64_t seed = 42;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct StepInfo {
  std::size_t step = 0;
  Task task = Task::denoise;
  double loss = 0.0;      // mean cross-entropy over the batch
  double aux_loss = 0.0;  // mean balance penalty over the batch
  double drop_rate = 0.0;
  std::vector<std::size_t> expert_load;
};

/// Multi-task training loop. Texts are truncated per task so every
/// sample's row count fits the model's max_len; construction fails if
/// some positively weighted task cannot fit even a minimal sample.
class Trainer {
 public:
  Trainer(model::Parameters params, TrainConfig cfg, Dataset data);
  StepInfo step();
  std::size_t steps_done() const { return step_; }
  model::Parameters& params() { return params_; }
  const model::Parameters& params() const { return params_; }

 private:
  Task draw_task();
  model::MultimodalSample draw_sample(Task t);

  model::Parameters params_;
  TrainConfig cfg_;
  Dataset data_;
  Rng rng_;
  Adam adam_;
  std::size_t step_ = 0;
  std::array<bool, kNumTasks> warned_{};
  std::vector<std::size_t> denoise_texts_;  // indices with length >= 2
  std::vector<std::size_t> denoise_pairs_;  // pair indices with caption >= 2
};

/// CSV columns: step,task,loss,aux_loss,drop_rate. The per-expert load
/// histogram goes to the separate expert_log stream (either stream may
/// be null).
std::vector<StepInfo> run_training(Trainer& trainer, std::size_t steps,
                                   std::ostream* metrics,
                                   std::ostream* expert_log);

}  // namespace m6::pretrain
