#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "m6/image.hpp"
#include "m6/model.hpp"
#include "m6/tensor.hpp"

namespace m6 {
class Rng;
}

namespace m6::vq {

struct VqConfig {
  std::size_t codebook_size = 64;  // K
  std::size_t code_dim = 16;
  std::size_t image_side = 32;
  std::size_t patch = 8;
  std::size_t enc_hidden = 128;
  double beta = 0.25;  // commitment coefficient

  std::size_t grid_side() const { return image_side / patch; }
  std::size_t patch_dim() const { return patch * patch * 3; }
  void validate() const;
};

void to_json(nlohmann::json& j, const VqConfig& c);
void from_json(const nlohmann::json& j, VqConfig& c);

/// Stage 1: per-patch MLP autoencoder with a vector-quantized
/// bottleneck. Encoder 192 -> hidden -> code_dim, decoder mirrored with
/// a sigmoid output so pixels stay in [0,1].
struct VqModel {
  VqConfig cfg;
  Tensor enc_w1, enc_b1, enc_w2, enc_b2;
  Tensor dec_w1, dec_b1, dec_w2, dec_b2;
  Tensor codebook;  // [K, code_dim]
  bool trained = false;

  static VqModel init(const VqConfig& cfg, Rng& rng);
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> all() const;
  void save(const std::filesystem::path& dir) const;
  static VqModel load(const std::filesystem::path& dir);
};

struct QuantizeResult {
  std::vector<int> ids;  // nearest code per row, ties to the lowest id
  Tensor z_q;            // code values with straight-through gradient to z
  Tensor codebook_loss;  // ||sg(z) - e||^2, pulls codes toward encodings
  Tensor commit_loss;    // ||z - sg(e)||^2, unscaled; beta applied by callers
};

QuantizeResult quantize(const Tensor& z, const Tensor& codebook);

/// Encoder half without quantization: raw patches [n, patch_dim] to
/// latent rows [n, code_dim].
Tensor encode_z(const VqModel& m, const Tensor& patches);
/// Decoder half: latent rows to patch values in [0,1].
Tensor decode_z(const VqModel& m, const Tensor& z);

struct CodeGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> ids;  // row-major, values in [0, K)
};

CodeGrid vq_encode(const VqModel& m, const img::Image& image);
img::Image vq_decode(const VqModel& m, const CodeGrid& grid);

struct VqLosses {
  double recon = 0.0;
  double codebook = 0.0;
  double commit = 0.0;
  double total = 0.0;  // recon + codebook + beta * commit
};

/// One optimizer step on a batch of images; losses are batch means.
/// Codebook rows the batch never selects are first re-seated onto the
/// worst-quantized latents, so the whole table stays in use.
VqLosses vq_train_step(VqModel& m, std::span<const img::Image> batch,
                       Adam& opt);

/// Full-batch training loop; marks the model trained when done.
std::vector<VqLosses> train_vq(VqModel& m, std::span<const img::Image> images,
                               std::size_t steps, double lr);

/// Stage 2 sample: purely causal sequence BOS, text..., SEP, then the
/// grid's codes shifted into the id range [text_vocab, text_vocab + K).
/// Loss applies only at positions whose next token is a code.
model::MultimodalSample make_t2i_sample(std::span<const int> text_ids,
                                        const CodeGrid& grid,
                                        std::size_t text_vocab,
                                        std::size_t max_len);

/// Autoregressive top-k sampling restricted to the code id range;
/// always emits exactly rows*cols codes.
CodeGrid sample_codes(const model::Parameters& params,
                      std::span<const int> text_ids, std::size_t text_vocab,
                      std::size_t codebook_size, std::size_t rows,
                      std::size_t cols, std::size_t top_k, double temperature,
                      Rng& rng);

img::Image generate_image(const VqModel& vq_model,
                          const model::Parameters& params,
                          std::span<const int> text_ids, std::size_t text_vocab,
                          std::size_t top_k, double temperature, Rng& rng);

/// Overfit-style trainer for the code language model; returns the mean
/// cross-entropy per step.
std::vector<double> train_t2i(model::Parameters& params,
                              std::span<const model::MultimodalSample> samples,
                              std::size_t steps, std::size_t batch_size,
                              double lr, std::uint64_t seed);

}  // namespace m6::vq
