#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "m6/moe.hpp"
#include "m6/rng.hpp"
#include "m6/tensor.hpp"
#include "testutil.hpp"

using namespace m6;

TEST_CASE("gate: picks the top-k experts per token and renormalizes") {
  // 2 tokens, 3 experts; gate weights chosen so probabilities are easy.
  Tensor x = Tensor::from_data({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor wg = Tensor::from_data({2, 3}, {2.0, 1.0, 0.0,   // token 0 favors e0
                                         0.0, 1.0, 2.0},  // token 1 favors e2
                                true);
  moe::GateResult g = moe::gate(x, wg, 2);
  REQUIRE(g.expert_of.size() == 4);
  CHECK(g.expert_of[0] == 0);
  CHECK(g.expert_of[1] == 1);
  CHECK(g.expert_of[2] == 2);
  CHECK(g.expert_of[3] == 1);

  // Probabilities renormalized over the chosen two.
  double p0 = std::exp(2.0) / (std::exp(2.0) + std::exp(1.0) + 1.0);
  double p1 = std::exp(1.0) / (std::exp(2.0) + std::exp(1.0) + 1.0);
  CHECK(g.weights.at(0, 0) == doctest::Approx(p0 / (p0 + p1)).epsilon(1e-12));
  CHECK(g.weights.at(0, 1) == doctest::Approx(p1 / (p0 + p1)).epsilon(1e-12));
  CHECK(g.weights.at(0, 0) + g.weights.at(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("gate: equal logits tie to the lowest expert id") {
  Tensor x = Tensor::from_data({1, 2}, {0.3, -0.2});
  Tensor wg = Tensor::zeros({2, 4}, true);  // all logits equal
  moe::GateResult g = moe::gate(x, wg, 2);
  CHECK(g.expert_of[0] == 0);
  CHECK(g.expert_of[1] == 1);
}

TEST_CASE("single-expert mixture is bit-identical to the plain ffn") {
  Rng rng(31);
  std::size_t d = 8, hidden = 16, T = 5;
  moe::ExpertBank bank = moe::make_bank(1, d, hidden, rng);
  Tensor gate_w = Tensor::randn({d, 1}, rng, 0.3, true);
  Tensor x = Tensor::randn({T, d}, rng, 0.7);

  moe::MoeOut out = moe::apply(x, gate_w, bank, 1, 1.25);
  Tensor direct = moe::ffn(x, bank.experts[0].w1, bank.experts[0].b1,
                           bank.experts[0].w2, bank.experts[0].b2);
  REQUIRE(out.y.size() == direct.size());
  for (std::size_t i = 0; i < direct.size(); ++i)
    CHECK(out.y.data()[i] == direct.data()[i]);
  CHECK(out.aux.item() == 1.0);
  CHECK(out.drop_rate == 0.0);
}

TEST_CASE("balance penalty: exact values at the two extremes") {
  std::size_t E = 4, T = 8;
  // Uniform probabilities and round-robin assignment.
  Tensor uni = Tensor::full({T, E}, 1.0 / E);
  std::vector<int> rr(T);
  for (std::size_t t = 0; t < T; ++t) rr[t] = int(t % E);
  CHECK(std::abs(moe::load_balance_loss(uni, rr).item() - 1.0) <= 1e-12);

  // Fully collapsed: all probability and all tokens on expert 0.
  std::vector<double> onehot(T * E, 0.0);
  for (std::size_t t = 0; t < T; ++t) onehot[t * E] = 1.0;
  Tensor coll = Tensor::from_data({T, E}, std::move(onehot));
  std::vector<int> zeros(T, 0);
  CHECK(moe::load_balance_loss(coll, zeros).item() == doctest::Approx(double(E)).epsilon(1e-12));
}

TEST_CASE("capacity is never exceeded across 1000 random routings") {
  Rng rng(32);
  for (int trial = 0; trial < 1000; ++trial) {
    std::size_t E = 1 + rng.randint(6);
    std::size_t k = 1 + rng.randint(E);
    std::size_t T = 1 + rng.randint(12);
    std::size_t d = 4;
    double cf = 0.5 + rng.uniform() * 1.5;

    moe::ExpertBank bank = moe::make_bank(E, d, 8, rng);
    Tensor gate_w = Tensor::randn({d, E}, rng, 1.0, true);
    Tensor x = Tensor::randn({T, d}, rng, 1.0);
    moe::GateResult g = moe::gate(x, gate_w, k);
    moe::DispatchResult dr = moe::dispatch_combine(x, g, bank, cf);

    std::size_t capacity = static_cast<std::size_t>(
        std::ceil(cf * double(T) * double(k) / double(E)));
    capacity = std::max<std::size_t>(capacity, 1);
    REQUIRE(dr.expert_load.size() == E);
    std::size_t processed = 0;
    for (std::size_t load : dr.expert_load) {
      CHECK(load <= capacity);
      processed += load;
    }
    // Dropped weight + processed weight account for every assignment.
    double expect_drop = double(T * k - processed) / double(T * k);
    CHECK(dr.drop_rate == doctest::Approx(expect_drop).epsilon(1e-12));
  }
}

TEST_CASE("overflow drops route weight but keeps shape") {
  Rng rng(33);
  std::size_t d = 4, T = 6;
  moe::ExpertBank bank = moe::make_bank(2, d, 8, rng);
  // Gate weights that force every token onto expert 0.
  Tensor gate_w = Tensor::from_data({4, 2}, {5, -5, 5, -5, 5, -5, 5, -5}, true);
  Tensor x = Tensor::full({T, d}, 0.5);
  moe::GateResult g = moe::gate(x, gate_w, 1);
  moe::DispatchResult dr = moe::dispatch_combine(x, g, bank, 0.5);
  // capacity = ceil(0.5 * 6 * 1 / 2) = 2, so 4 of 6 assignments drop.
  CHECK(dr.expert_load[0] == 2);
  CHECK(dr.expert_load[1] == 0);
  CHECK(dr.drop_rate == doctest::Approx(4.0 / 6.0));
  CHECK(dr.combined.shape() == Shape{T, d});
  // Dropped tokens contribute zero rows (residual path handles them).
  for (std::size_t j = 0; j < d; ++j) {
    CHECK(dr.combined.at(2, j) == 0.0);
    CHECK(dr.combined.at(5, j) == 0.0);
  }
}

TEST_CASE("gradients flow through gate and experts") {
  Rng rng(34);
  std::size_t d = 4, E = 3, k = 2, T = 4;
  moe::ExpertBank bank = moe::make_bank(E, d, 6, rng);
  Tensor gate_w = Tensor::randn({d, E}, rng, 0.5, true);
  Tensor x = Tensor::randn({T, d}, rng, 0.5, true);

  std::vector<Tensor> params{gate_w, x};
  for (const moe::Expert& e : bank.experts) {
    params.push_back(e.w1);
    params.push_back(e.b1);
    params.push_back(e.w2);
    params.push_back(e.b2);
  }
  auto rep = testutil::fd_check(
      [&] {
        moe::MoeOut out = moe::apply(x, gate_w, bank, k, 2.0);
        return add(sum_all(mul(out.y, out.y)), scale(out.aux, 0.1));
      },
      params, 1e-5, 8);
  INFO(rep.worst_where);
  CHECK(rep.worst < 1e-3);
}

TEST_CASE("routing statistics: comm cost counts routed values") {
  Rng rng(35);
  std::size_t d = 4, E = 4, T = 8;
  moe::ExpertBank bank = moe::make_bank(E, d, 8, rng);
  Tensor gate_w = Tensor::randn({d, E}, rng, 0.8, true);
  Tensor x = Tensor::randn({T, d}, rng, 1.0);
  // Generous capacity: nothing drops, so every assignment moves d values.
  moe::MoeOut out = moe::apply(x, gate_w, bank, 2, 4.0);
  CHECK(out.comm_cost == T * 2 * d);
  CHECK(out.drop_rate == 0.0);
}
