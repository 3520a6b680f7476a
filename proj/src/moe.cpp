#include "m6/moe.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "m6/rng.hpp"

namespace m6::moe {

ExpertBank make_bank(std::size_t n_experts, std::size_t d_model,
                     std::size_t hidden, Rng& rng) {
  ExpertBank bank;
  bank.experts.reserve(n_experts);
  double s1 = 1.0 / std::sqrt(static_cast<double>(d_model));
  double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (std::size_t e = 0; e < n_experts; ++e) {
    Expert ex;
    ex.w1 = Tensor::randn({d_model, hidden}, rng, s1);
    ex.b1 = Tensor::zeros({1, hidden});
    ex.w2 = Tensor::randn({hidden, d_model}, rng, s2);
    ex.b2 = Tensor::zeros({1, d_model});
    for (Tensor t : {ex.w1, ex.b1, ex.w2, ex.b2}) t.set_requires_grad(true);
    bank.experts.push_back(ex);
  }
  return bank;
}

Tensor ffn(const Tensor& x, const Tensor& w1, const Tensor& b1,
           const Tensor& w2, const Tensor& b2) {
  Tensor h = gelu(add_rowvec(matmul(x, w1), b1));
  return add_rowvec(matmul(h, w2), b2);
}

GateResult gate(const Tensor& x, const Tensor& gate_w, std::size_t top_k) {
  if (x.ndim() != 2 || gate_w.ndim() != 2 || x.dim(1) != gate_w.dim(0))
    throw std::invalid_argument("gate: shape mismatch");
  std::size_t T = x.dim(0);
  std::size_t E = gate_w.dim(1);
  if (top_k == 0 || top_k > E)
    throw std::invalid_argument("gate: top_k out of range");

  GateResult g;
  g.probs = softmax(matmul(x, gate_w), 1);

  // Pick top-k probabilities per token; equal probabilities resolve to
  // the lower expert id so routing is reproducible.
  g.expert_of.resize(T * top_k);
  std::vector<std::pair<std::size_t, std::size_t>> at(T * top_k);
  const double* p = g.probs.data().data();
  std::vector<int> order(E);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t e = 0; e < E; ++e) order[e] = static_cast<int>(e);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return p[t * E + a] > p[t * E + b];
    });
    for (std::size_t k = 0; k < top_k; ++k) {
      g.expert_of[t * top_k + k] = order[k];
      at[t * top_k + k] = {t, static_cast<std::size_t>(order[k])};
    }
  }

  Tensor picked = gather_elems(g.probs, at);  // [T*k, 1]
  Tensor as_rows = reshape(picked, {T, top_k});
  Tensor denom = sum_rows(as_rows);           // [T, 1]
  g.weights = div_colvec(as_rows, denom);     // [T, k]
  return g;
}

DispatchResult dispatch_combine(const Tensor& x, const GateResult& g,
                                const ExpertBank& bank,
                                double capacity_factor) {
  std::size_t T = x.dim(0);
  std::size_t d = x.dim(1);
  std::size_t E = bank.size();
  std::size_t k = g.weights.dim(1);
  std::size_t capacity = static_cast<std::size_t>(std::ceil(
      capacity_factor * static_cast<double>(T * k) / static_cast<double>(E)));
  if (capacity == 0) capacity = 1;

  // Assign in token order; an expert past capacity drops the token.
  std::vector<std::vector<std::size_t>> tok_of(E);   // token index per slot
  std::vector<std::vector<std::size_t>> slot_of(E);  // flat weight index
  std::size_t dropped = 0;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      std::size_t e = static_cast<std::size_t>(g.expert_of[t * k + j]);
      if (tok_of[e].size() < capacity) {
        tok_of[e].push_back(t);
        slot_of[e].push_back(t * k + j);
      } else {
        ++dropped;
      }
    }
  }

  DispatchResult out;
  out.drop_rate = T * k == 0 ? 0.0
                             : static_cast<double>(dropped) /
                                   static_cast<double>(T * k);
  out.expert_load.resize(E);
  Tensor acc;  // starts empty; dropped assignments simply contribute nothing

  Tensor wflat = reshape(g.weights, {T * k, 1});
  for (std::size_t e = 0; e < E; ++e) {
    out.expert_load[e] = tok_of[e].size();
    if (tok_of[e].empty()) continue;
    out.comm_cost += tok_of[e].size() * d;
    Tensor xe = gather_rows(x, tok_of[e]);
    const Expert& ex = bank.experts[e];
    Tensor ye = ffn(xe, ex.w1, ex.b1, ex.w2, ex.b2);
    Tensor we = gather_rows(wflat, slot_of[e]);  // [n_e, 1]
    Tensor part = scatter_rows_weighted(T, ye, tok_of[e], we);
    acc = acc.defined() ? add(acc, part) : part;
  }
  out.combined = acc.defined() ? acc : Tensor::zeros({T, d});
  return out;
}

Tensor load_balance_loss(const Tensor& probs,
                         const std::vector<int>& top1_expert) {
  std::size_t T = probs.dim(0);
  std::size_t E = probs.dim(1);
  if (top1_expert.size() != T)
    throw std::invalid_argument("load_balance_loss: need one top expert per token");
  std::vector<double> frac(E, 0.0);
  for (int e : top1_expert) frac[static_cast<std::size_t>(e)] += 1.0;
  for (double& f : frac) f /= static_cast<double>(T);

  // mean gate probability per expert, kept differentiable
  Tensor ones = Tensor::full({1, T}, 1.0 / static_cast<double>(T));
  Tensor pbar = matmul(ones, probs);  // [1, E]
  Tensor f = Tensor::from_data({1, E}, frac);
  return scale(sum_all(mul(pbar, f)), static_cast<double>(E));
}

MoeOut apply(const Tensor& x, const Tensor& gate_w, const ExpertBank& bank,
             std::size_t top_k, double capacity_factor) {
  GateResult g = gate(x, gate_w, top_k);
  std::size_t T = x.dim(0);
  std::size_t k = top_k;
  std::vector<int> top1(T);
  for (std::size_t t = 0; t < T; ++t) top1[t] = g.expert_of[t * k];

  DispatchResult d = dispatch_combine(x, g, bank, capacity_factor);
  MoeOut out;
  out.y = d.combined;
  out.aux = load_balance_loss(g.probs, top1);
  out.drop_rate = d.drop_rate;
  out.expert_load = d.expert_load;
  out.comm_cost = d.comm_cost;
  return out;
}

}  // namespace m6::moe
