#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "m6/moe.hpp"
#include "m6/tensor.hpp"

namespace m6 {
class Rng;
}

namespace m6::model {

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_experts = 1;  // 1 selects the dense feed-forward
  std::size_t vocab_size = 0;
  std::size_t max_len = 256;
  std::size_t patch_dim = 192;  // 8x8 RGB patches
  std::size_t ffn_mult = 4;
  std::size_t moe_top_k = 2;
  double capacity_factor = 1.25;
  double aux_loss_coef = 0.01;
  int schema_version = 1;

  void validate() const;
  std::size_t head_dim() const { return d_model / n_heads; }
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Sequence layout: visual tokens, then bidirectional (masked) text,
/// then causal text.
struct SegmentLayout {
  std::size_t n_visual = 0;
  std::size_t n_masked = 0;
  std::size_t n_causal = 0;
  std::size_t total() const { return n_visual + n_masked + n_causal; }
};

/// Boolean query-key visibility, true = may attend.
struct AttentionMask {
  std::size_t n = 0;
  std::vector<std::uint8_t> allowed;

  bool at(std::size_t i, std::size_t j) const { return allowed[i * n + j]; }
  void set(std::size_t i, std::size_t j, bool v) {
    allowed[i * n + j] = v ? 1 : 0;
  }
};

/// Visibility rules: visual and masked text form one bidirectional
/// block that never sees causal positions; causal positions see the
/// whole bidirectional block plus causal positions at or before
/// themselves.
AttentionMask build_mask(const SegmentLayout& layout);

/// The unit the model consumes. Targets are aligned with positions;
/// non-causal positions must hold kIgnoreId.
struct MultimodalSample {
  Tensor patches;  // [n_visual, patch_dim] raw patch values, may be empty
  std::vector<int> masked_ids;
  std::vector<int> causal_ids;
  std::vector<int> targets;  // size total(), kIgnoreId outside the loss
  std::string task;

  SegmentLayout layout() const {
    std::size_t nv = patches.defined() ? patches.dim(0) : 0;
    return {nv, masked_ids.size(), causal_ids.size()};
  }
};

struct LayerParams {
  Tensor ln1_g, ln1_b;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_g, ln2_b;
  // dense feed-forward (n_experts == 1)
  Tensor w1, b1, w2, b2;
  // mixture routing (n_experts > 1)
  Tensor gate_w;
  moe::ExpertBank bank;
};

/// All learned tensors. The output projection is the token embedding
/// itself (weights tied), so there is no separate logit matrix.
struct Parameters {
  ModelConfig cfg;
  Tensor tok_embed;  // [vocab_size, d_model]
  Tensor seg_embed;  // [3, d_model]; rows: visual, masked text, causal text
  Tensor pos_embed;  // [max_len, d_model]
  Tensor patch_proj; // [patch_dim, d_model]
  std::vector<LayerParams> layers;
  Tensor final_g, final_b;

  static Parameters init(const ModelConfig& cfg, Rng& rng);
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> all() const;

  /// Writes <dir>/model.m6t and <dir>/model.json.
  void save(const std::filesystem::path& dir) const;
  static Parameters load(const std::filesystem::path& dir);
};

/// Exact scalar parameter count for a config, computed arithmetically.
std::size_t param_count(const ModelConfig& cfg);

/// Token + segment + position embedding of a sample; visual positions
/// come from the learned patch projection.
Tensor embed(const MultimodalSample& sample, const Parameters& params);

/// Pre-norm residual attention block: x + MHA(LN(x)) under the mask.
Tensor attention(const Tensor& x, const AttentionMask& mask,
                 const LayerParams& lp, std::size_t n_heads);

struct ForwardStats {
  double aux_loss = 0.0;
  double drop_rate = 0.0;
  std::vector<std::size_t> expert_load;
  std::size_t comm_cost = 0;  // tokens*d_model routed through experts
};

struct ForwardResult {
  Tensor logits;    // [total, vocab_size]
  Tensor aux_loss;  // scalar, zero when dense
  ForwardStats stats;
};

ForwardResult forward(const MultimodalSample& sample, const Parameters& params,
                      const AttentionMask* mask_override = nullptr);

}  // namespace m6::model
