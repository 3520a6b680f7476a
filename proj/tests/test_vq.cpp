#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <limits>
#include <vector>

#include "m6/rng.hpp"
#include "m6/tokenizer.hpp"
#include "m6/vq.hpp"
#include "testutil.hpp"

using namespace m6;

namespace {

vq::VqConfig tiny_cfg() {
  vq::VqConfig c;
  c.codebook_size = 8;
  c.code_dim = 4;
  c.image_side = 16;
  c.patch = 8;
  c.enc_hidden = 16;
  return c;
}

// Brute-force nearest row by squared distance, first winner on ties.
int nearest_row(std::span<const double> v, const Tensor& codebook) {
  std::size_t k = codebook.dim(0), d = codebook.dim(1);
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < k; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      double diff = v[c] - codebook.at(r, c);
      acc += diff * diff;
    }
    if (acc < best_d) {
      best_d = acc;
      best = static_cast<int>(r);
    }
  }
  return best;
}

}  // namespace

TEST_CASE("quantize matches brute-force nearest neighbour") {
  Rng rng(11);
  Tensor codebook = Tensor::randn({16, 6}, rng, 1.0, true);
  Tensor z = Tensor::randn({40, 6}, rng, 1.0, true);
  vq::QuantizeResult q = vq::quantize(z, codebook);
  REQUIRE(q.ids.size() == 40);
  for (std::size_t i = 0; i < 40; ++i) {
    std::span<const double> row{z.data().data() + i * 6, 6};
    CHECK(q.ids[i] == nearest_row(row, codebook));
  }
}

TEST_CASE("quantize tie goes to the lowest id") {
  // Two identical codebook rows; input exactly on them.
  Tensor codebook = Tensor::from_data(
      {3, 2}, {1.0, 2.0, 5.0, 5.0, 1.0, 2.0}, true);
  Tensor z = Tensor::from_data({1, 2}, {1.0, 2.0}, true);
  vq::QuantizeResult q = vq::quantize(z, codebook);
  CHECK(q.ids[0] == 0);
}

TEST_CASE("quantize values and gradients") {
  Tensor codebook = Tensor::from_data(
      {2, 2}, {0.0, 0.0, 10.0, 10.0}, true);
  Tensor z = Tensor::from_data({2, 2}, {1.0, -1.0, 9.0, 12.0}, true);
  vq::QuantizeResult q = vq::quantize(z, codebook);
  // Values are the selected codebook rows.
  CHECK(q.z_q.at(0, 0) == 0.0);
  CHECK(q.z_q.at(0, 1) == 0.0);
  CHECK(q.z_q.at(1, 0) == 10.0);
  CHECK(q.z_q.at(1, 1) == 10.0);

  // Straight-through: gradient wrt z_q lands on z untouched.
  z.zero_grad();
  codebook.zero_grad();
  Tensor loss = mse(q.z_q, Tensor::zeros({2, 2}));
  backward(loss);
  CHECK(z.grad().size() == 4);
  // d/dzq mse = 2*zq/4; straight-through copies it to z.
  CHECK(z.grad()[2] == doctest::Approx(2.0 * 10.0 / 4.0).epsilon(1e-12));
  CHECK(codebook.grad().empty());  // no path into the codebook

  // codebook_loss trains the codebook only; commit_loss trains z only.
  z.zero_grad();
  codebook.zero_grad();
  backward(q.codebook_loss);
  CHECK_FALSE(codebook.grad().empty());
  CHECK(z.grad().empty());

  z.zero_grad();
  codebook.zero_grad();
  backward(q.commit_loss);
  CHECK_FALSE(z.grad().empty());
  CHECK(codebook.grad().empty());

  // The two penalties measure the same distance.
  CHECK(q.codebook_loss.item() == doctest::Approx(q.commit_loss.item()).epsilon(1e-12));
}

TEST_CASE("model init, save, load") {
  vq::VqConfig cfg = tiny_cfg();
  Rng rng(3);
  vq::VqModel m = vq::VqModel::init(cfg, rng);
  CHECK(m.codebook.dim(0) == 8);
  CHECK(m.codebook.dim(1) == 4);
  CHECK_FALSE(m.trained);

  img::Image im = testutil::make_pattern(3, 16);
  CHECK_THROWS(vq::vq_encode(m, im));  // untrained

  auto dir = testutil::fresh_dir("vq_roundtrip");
  m.trained = true;
  m.save(dir);
  vq::VqModel back = vq::VqModel::load(dir);
  CHECK(back.trained);
  CHECK(back.cfg.codebook_size == cfg.codebook_size);
  auto a = m.named(), b = back.named();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].second.data().size() == b[i].second.data().size());
    for (std::size_t j = 0; j < a[i].second.data().size(); ++j)
      CHECK(a[i].second.data()[j] == b[i].second.data()[j]);
  }
}

TEST_CASE("training reduces reconstruction error and round-trips codes") {
  vq::VqConfig cfg = tiny_cfg();
  Rng rng(21);
  vq::VqModel m = vq::VqModel::init(cfg, rng);

  std::vector<img::Image> images;
  for (int k = 0; k < 4; ++k) images.push_back(testutil::make_pattern(k, 16));

  auto losses = vq::train_vq(m, images, 60, 1e-2);
  REQUIRE(losses.size() == 60);
  CHECK(m.trained);
  CHECK(losses.back().recon < losses.front().recon);
  for (const auto& l : losses)
    CHECK(std::abs(l.total - (l.recon + l.codebook + cfg.beta * l.commit)) <
          1e-12);

  vq::CodeGrid g = vq::vq_encode(m, images[0]);
  CHECK(g.rows == 2);
  CHECK(g.cols == 2);
  REQUIRE(g.ids.size() == 4);
  for (int id : g.ids) {
    CHECK(id >= 0);
    CHECK(id < 8);
  }
  img::Image out = vq::vq_decode(m, g);
  CHECK(out.height == 16);
  CHECK(out.width == 16);
  for (double px : out.rgb) {
    CHECK(px >= 0.0);
    CHECK(px <= 1.0);
  }
}

TEST_CASE("t2i sample layout and targets") {
  vq::CodeGrid grid;
  grid.rows = 2;
  grid.cols = 2;
  grid.ids = {0, 1, 2, 3};
  std::vector<int> text{7, 8};
  model::MultimodalSample s = vq::make_t2i_sample(text, grid, 10, 128);
  CHECK(s.task == "t2i");
  CHECK(s.masked_ids.empty());
  CHECK_FALSE(s.patches.defined());
  std::vector<int> causal{tok::BOS, 7, 8, tok::SEP, 10, 11, 12, 13};
  CHECK(s.causal_ids == causal);
  REQUIRE(s.targets.size() == causal.size());
  // Loss only where the next token is a code id.
  CHECK(s.targets[0] == kIgnoreId);
  CHECK(s.targets[1] == kIgnoreId);
  CHECK(s.targets[2] == kIgnoreId);
  CHECK(s.targets[3] == 10);
  CHECK(s.targets[4] == 11);
  CHECK(s.targets[5] == 12);
  CHECK(s.targets[6] == 13);
  CHECK(s.targets[7] == kIgnoreId);

  CHECK_THROWS(vq::make_t2i_sample(text, grid, 10, 7));  // exceeds max_len
  std::vector<int> bad{11, 2};
  CHECK_THROWS(vq::make_t2i_sample(bad, grid, 10, 128));  // id >= text_vocab
}

TEST_CASE("code sampling is shaped, in range, and seed-deterministic") {
  model::ModelConfig mc;
  mc.n_layers = 1;
  mc.d_model = 16;
  mc.n_heads = 2;
  mc.n_experts = 1;
  mc.vocab_size = 10 + 8;
  mc.max_len = 64;
  mc.patch_dim = 12;
  mc.ffn_mult = 2;
  Rng rng(5);
  model::Parameters params = model::Parameters::init(mc, rng);
  std::vector<int> text{6, 7};

  Rng s1(17), s2(17), s3(99);
  vq::CodeGrid a = vq::sample_codes(params, text, 10, 8, 2, 2, 4, 1.0, s1);
  vq::CodeGrid b = vq::sample_codes(params, text, 10, 8, 2, 2, 4, 1.0, s2);
  vq::CodeGrid c = vq::sample_codes(params, text, 10, 8, 2, 2, 4, 1.0, s3);
  REQUIRE(a.ids.size() == 4);
  CHECK(a.rows == 2);
  CHECK(a.cols == 2);
  for (int id : a.ids) {
    CHECK(id >= 0);
    CHECK(id < 8);
  }
  CHECK(a.ids == b.ids);
  (void)c;  // different seed may or may not differ; only shape is promised
  for (int id : c.ids) {
    CHECK(id >= 0);
    CHECK(id < 8);
  }

  // Zero temperature and k=1 both mean greedy: identical picks.
  Rng g1(1), g2(2);
  vq::CodeGrid t0 = vq::sample_codes(params, text, 10, 8, 2, 2, 4, 0.0, g1);
  vq::CodeGrid k1 = vq::sample_codes(params, text, 10, 8, 2, 2, 1, 1.0, g2);
  CHECK(t0.ids == k1.ids);
}

TEST_CASE("t2i training drives the code loss down") {
  model::ModelConfig mc;
  mc.n_layers = 1;
  mc.d_model = 24;
  mc.n_heads = 2;
  mc.n_experts = 1;
  mc.vocab_size = 10 + 4;
  mc.max_len = 32;
  mc.patch_dim = 12;
  mc.ffn_mult = 2;
  Rng rng(9);
  model::Parameters params = model::Parameters::init(mc, rng);

  vq::CodeGrid g0{1, 2, {0, 1}};
  vq::CodeGrid g1{1, 2, {2, 3}};
  std::vector<int> ta{6}, tb{7};
  std::vector<model::MultimodalSample> samples;
  samples.push_back(vq::make_t2i_sample(ta, g0, 10, 32));
  samples.push_back(vq::make_t2i_sample(tb, g1, 10, 32));

  std::vector<double> losses = vq::train_t2i(params, samples, 80, 2, 5e-3, 4);
  REQUIRE(losses.size() == 80);
  CHECK(losses.back() < losses.front());
  CHECK(losses.back() < 1.0);
}
