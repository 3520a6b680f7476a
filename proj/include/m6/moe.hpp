#pragma once

#include <cstddef>
#include <vector>

#include "m6/tensor.hpp"

namespace m6 {
class Rng;
}

namespace m6::moe {

/// One expert: a position-wise two-layer feed-forward.
struct Expert {
  Tensor w1, b1;  // [d, hidden], [1, hidden]
  Tensor w2, b2;  // [hidden, d], [1, d]
};

struct ExpertBank {
  std::vector<Expert> experts;
  std::size_t size() const { return experts.size(); }
  bool empty() const { return experts.empty(); }
};

ExpertBank make_bank(std::size_t n_experts, std::size_t d_model,
                     std::size_t hidden, Rng& rng);

/// Shared feed-forward body: gelu(x W1 + b1) W2 + b2. Both the dense
/// path and every expert call this exact function, so a single-expert
/// mixture reproduces the dense computation bit for bit.
Tensor ffn(const Tensor& x, const Tensor& w1, const Tensor& b1,
           const Tensor& w2, const Tensor& b2);

struct GateResult {
  Tensor probs;           // [T, E] softmax of gate logits, on tape
  Tensor weights;         // [T, k] chosen probabilities renormalised, on tape
  std::vector<int> expert_of;  // T*k chosen expert ids, token-major
};

/// Softmax gating with top-k selection; ties pick the lower expert id.
/// The returned weights stay differentiable through the gate matrix.
GateResult gate(const Tensor& x, const Tensor& gate_w, std::size_t top_k);

struct DispatchResult {
  Tensor combined;  // [T, d] weighted expert outputs
  double drop_rate = 0.0;
  std::vector<std::size_t> expert_load;  // assignments kept per expert
  std::size_t comm_cost = 0;             // kept assignments * d_model
};

/// Routes tokens to their chosen experts under a capacity limit of
/// ceil(capacity_factor * T * k / E) slots per expert, filled in token
/// order; assignments past capacity are dropped and their gate weight
/// is lost (no renormalisation).
DispatchResult dispatch_combine(const Tensor& x, const GateResult& g,
                                const ExpertBank& bank,
                                double capacity_factor);

/// Load-balance penalty E * sum_e f_e * p_bar_e where f_e is the
/// fraction of tokens whose best expert is e and p_bar_e the mean gate
/// probability of e. Uniform routing gives exactly 1.
Tensor load_balance_loss(const Tensor& probs,
                         const std::vector<int>& top1_expert);

struct MoeOut {
  Tensor y;         // [T, d]
  Tensor aux;       // scalar, on tape
  double drop_rate = 0.0;
  std::vector<std::size_t> expert_load;
  std::size_t comm_cost = 0;
};

MoeOut apply(const Tensor& x, const Tensor& gate_w, const ExpertBank& bank,
             std::size_t top_k, double capacity_factor);

}  // namespace m6::moe
