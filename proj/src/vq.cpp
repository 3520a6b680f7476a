#include "m6/vq.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "m6/moe.hpp"
#include "m6/patches.hpp"
#include "m6/pretrain.hpp"
#include "m6/rng.hpp"
#include "m6/serialize.hpp"
#include "m6/tokenizer.hpp"

namespace m6::vq {

void VqConfig::validate() const {
  if (codebook_size < 2)
    throw std::invalid_argument("vq: need at least 2 codes");
  if (code_dim == 0 || enc_hidden == 0)
    throw std::invalid_argument("vq: zero-width layer");
  if (patch == 0 || image_side == 0 || image_side % patch != 0)
    throw std::invalid_argument("vq: image_side must be a multiple of patch");
  if (!(beta >= 0.0)) throw std::invalid_argument("vq: beta must be >= 0");
}

void to_json(nlohmann::json& j, const VqConfig& c) {
  j = nlohmann::json{{"codebook_size", c.codebook_size},
                     {"code_dim", c.code_dim},
                     {"image_side", c.image_side},
                     {"patch", c.patch},
                     {"enc_hidden", c.enc_hidden},
                     {"beta", c.beta}};
}

void from_json(const nlohmann::json& j, VqConfig& c) {
  c.codebook_size = j.value("codebook_size", c.codebook_size);
  c.code_dim = j.value("code_dim", c.code_dim);
  c.image_side = j.value("image_side", c.image_side);
  c.patch = j.value("patch", c.patch);
  c.enc_hidden = j.value("enc_hidden", c.enc_hidden);
  c.beta = j.value("beta", c.beta);
}

VqModel VqModel::init(const VqConfig& cfg, Rng& rng) {
  cfg.validate();
  VqModel m;
  m.cfg = cfg;
  std::size_t pd = cfg.patch_dim();
  double s_in = 1.0 / std::sqrt(static_cast<double>(pd));
  double s_hid = 1.0 / std::sqrt(static_cast<double>(cfg.enc_hidden));
  double s_code = 1.0 / std::sqrt(static_cast<double>(cfg.code_dim));
  m.enc_w1 = Tensor::randn({pd, cfg.enc_hidden}, rng, s_in);
  m.enc_b1 = Tensor::zeros({1, cfg.enc_hidden});
  m.enc_w2 = Tensor::randn({cfg.enc_hidden, cfg.code_dim}, rng, s_hid);
  m.enc_b2 = Tensor::zeros({1, cfg.code_dim});
  m.dec_w1 = Tensor::randn({cfg.code_dim, cfg.enc_hidden}, rng, s_code);
  m.dec_b1 = Tensor::zeros({1, cfg.enc_hidden});
  m.dec_w2 = Tensor::randn({cfg.enc_hidden, pd}, rng, s_hid);
  m.dec_b2 = Tensor::zeros({1, pd});
  m.codebook = Tensor::randn({cfg.codebook_size, cfg.code_dim}, rng, 1.0);
  for (std::size_t a = 0; a < cfg.codebook_size; ++a)
    for (std::size_t b = a + 1; b < cfg.codebook_size; ++b) {
      bool same = true;
      for (std::size_t c = 0; c < cfg.code_dim && same; ++c)
        same = m.codebook.at(a, c) == m.codebook.at(b, c);
      if (same) throw std::runtime_error("vq: duplicate codebook rows at init");
    }
  for (Tensor t : m.all()) t.set_requires_grad(true);
  return m;
}

std::vector<std::pair<std::string, Tensor>> VqModel::named() const {
  return {{"enc_w1", enc_w1}, {"enc_b1", enc_b1}, {"enc_w2", enc_w2},
          {"enc_b2", enc_b2}, {"dec_w1", dec_w1}, {"dec_b1", dec_b1},
          {"dec_w2", dec_w2}, {"dec_b2", dec_b2}, {"codebook", codebook}};
}

std::vector<Tensor> VqModel::all() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

void VqModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  save_tensors(dir / "vq.m6t", named());
  nlohmann::json j = cfg;
  j["trained"] = trained;
  std::ofstream f(dir / "vq.json");
  if (!f) throw std::runtime_error("cannot write " + (dir / "vq.json").string());
  f << j.dump(2) << "\n";
}

VqModel VqModel::load(const std::filesystem::path& dir) {
  std::ifstream f(dir / "vq.json");
  if (!f) throw std::runtime_error("cannot read " + (dir / "vq.json").string());
  nlohmann::json j = nlohmann::json::parse(f);
  VqModel m;
  m.cfg = j.get<VqConfig>();
  m.cfg.validate();
  m.trained = j.value("trained", false);
  auto tensors = load_tensors(dir / "vq.m6t");
  auto take = [&](const char* name) {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw std::runtime_error(std::string("stage-1 checkpoint is missing ") +
                               name);
    Tensor t = it->second;
    t.set_requires_grad(true);
    return t;
  };
  m.enc_w1 = take("enc_w1");
  m.enc_b1 = take("enc_b1");
  m.enc_w2 = take("enc_w2");
  m.enc_b2 = take("enc_b2");
  m.dec_w1 = take("dec_w1");
  m.dec_b1 = take("dec_b1");
  m.dec_w2 = take("dec_w2");
  m.dec_b2 = take("dec_b2");
  m.codebook = take("codebook");
  return m;
}

QuantizeResult quantize(const Tensor& z, const Tensor& codebook) {
  if (z.ndim() != 2 || codebook.ndim() != 2 || z.dim(1) != codebook.dim(1))
    throw std::invalid_argument("quantize: latent and codebook dims disagree");
  std::size_t n = z.dim(0), d = z.dim(1), k = codebook.dim(0);

  QuantizeResult out;
  out.ids.resize(n);
  std::vector<double> picked(n * d);
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_id = 0;
    for (std::size_t c = 0; c < k; ++c) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        double diff = z.at(i, j) - codebook.at(c, j);
        dist += diff * diff;
      }
      if (dist < best) {  // strict: ties keep the lowest id
        best = dist;
        best_id = c;
      }
    }
    out.ids[i] = static_cast<int>(best_id);
    rows[i] = best_id;
    for (std::size_t j = 0; j < d; ++j) picked[i * d + j] = codebook.at(best_id, j);
  }

  out.z_q = straight_through(z, std::move(picked));
  Tensor selected = gather_rows(codebook, rows);
  out.codebook_loss = mse(selected, detach(z));
  out.commit_loss = mse(z, detach(selected));
  return out;
}

Tensor encode_z(const VqModel& m, const Tensor& patches) {
  Tensor h = gelu(add_rowvec(matmul(patches, m.enc_w1), m.enc_b1));
  return add_rowvec(matmul(h, m.enc_w2), m.enc_b2);
}

Tensor decode_z(const VqModel& m, const Tensor& z) {
  Tensor h = gelu(add_rowvec(matmul(z, m.dec_w1), m.dec_b1));
  return sigmoid(add_rowvec(matmul(h, m.dec_w2), m.dec_b2));
}

CodeGrid vq_encode(const VqModel& m, const img::Image& image) {
  if (!m.trained)
    throw std::runtime_error("stage-1 weights are untrained; train first");
  patches::RawPatches raw =
      patches::split_patches(image, static_cast<int>(m.cfg.patch));
  Tensor z = encode_z(m, raw.values);
  QuantizeResult q = quantize(z, m.codebook);
  CodeGrid grid;
  grid.rows = raw.rows;
  grid.cols = raw.cols;
  grid.ids = std::move(q.ids);
  return grid;
}

img::Image vq_decode(const VqModel& m, const CodeGrid& grid) {
  if (!m.trained)
    throw std::runtime_error("stage-1 weights are untrained; train first");
  if (grid.ids.size() != grid.rows * grid.cols)
    throw std::invalid_argument("code grid size mismatch");
  std::vector<std::size_t> rows;
  rows.reserve(grid.ids.size());
  for (int id : grid.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= m.cfg.codebook_size)
      throw std::out_of_range("code id outside codebook");
    rows.push_back(static_cast<std::size_t>(id));
  }
  Tensor codes = gather_rows(m.codebook, rows);
  Tensor recon = decode_z(m, codes);
  return patches::assemble_patches(recon, grid.rows, grid.cols,
                                   static_cast<int>(m.cfg.patch));
}

namespace {

// A code that wins no assignment gets no gradient and drifts out of
// reach for good. Re-seat every unused row on a distinct worst-covered
// latent so the table cannot collapse onto a couple of entries.
void revive_dead_codes(VqModel& m, std::span<const Tensor> zs) {
  std::size_t k = m.cfg.codebook_size, d = m.cfg.code_dim;
  std::vector<char> used(k, 0);
  std::vector<std::pair<double, const double*>> latents;  // dist, z row
  for (const Tensor& z : zs) {
    const double* zd = z.data().data();
    for (std::size_t i = 0; i < z.dim(0); ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t best_id = 0;
      for (std::size_t c = 0; c < k; ++c) {
        double dist = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          double diff = zd[i * d + j] - m.codebook.at(c, j);
          dist += diff * diff;
        }
        if (dist < best) {
          best = dist;
          best_id = c;
        }
      }
      used[best_id] = 1;
      latents.emplace_back(best, zd + i * d);
    }
  }
  std::vector<std::size_t> dead;
  for (std::size_t c = 0; c < k; ++c)
    if (!used[c]) dead.push_back(c);
  if (dead.empty()) return;

  std::stable_sort(latents.begin(), latents.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  double* cb = m.codebook.data_mut().data();
  std::size_t next = 0;
  for (std::size_t c : dead) {
    // skip latents that already coincide with some row, including the
    // rows written earlier in this pass
    while (next < latents.size()) {
      const double* zrow = latents[next].second;
      bool dup = false;
      for (std::size_t cc = 0; cc < k && !dup; ++cc) {
        bool same = true;
        for (std::size_t j = 0; j < d && same; ++j)
          same = cb[cc * d + j] == zrow[j];
        dup = same;
      }
      if (!dup) break;
      ++next;
    }
    if (next >= latents.size()) break;  // fewer distinct latents than rows
    const double* zrow = latents[next++].second;
    for (std::size_t j = 0; j < d; ++j) cb[c * d + j] = zrow[j];
  }
}

}  // namespace

VqLosses vq_train_step(VqModel& m, std::span<const img::Image> batch,
                       Adam& opt) {
  if (batch.empty()) throw std::invalid_argument("vq_train_step: empty batch");
  std::vector<patches::RawPatches> raws;
  std::vector<Tensor> zs;
  raws.reserve(batch.size());
  zs.reserve(batch.size());
  for (const img::Image& image : batch) {
    raws.push_back(patches::split_patches(image, static_cast<int>(m.cfg.patch)));
    zs.push_back(encode_z(m, raws.back().values));
  }
  revive_dead_codes(m, zs);

  Tensor recon_sum, cb_sum, commit_sum;
  auto acc = [](Tensor& slot, const Tensor& v) {
    slot = slot.defined() ? add(slot, v) : v;
  };
  for (std::size_t b = 0; b < zs.size(); ++b) {
    QuantizeResult q = quantize(zs[b], m.codebook);
    Tensor recon = decode_z(m, q.z_q);
    acc(recon_sum, mse(recon, raws[b].values));
    acc(cb_sum, q.codebook_loss);
    acc(commit_sum, q.commit_loss);
  }
  double inv = 1.0 / static_cast<double>(batch.size());
  Tensor recon = scale(recon_sum, inv);
  Tensor cb = scale(cb_sum, inv);
  Tensor commit = scale(commit_sum, inv);
  Tensor total = add(add(recon, cb), scale(commit, m.cfg.beta));

  opt.zero_grad();
  backward(total);
  opt.step();

  VqLosses out;
  out.recon = recon.item();
  out.codebook = cb.item();
  out.commit = commit.item();
  out.total = total.item();
  return out;
}

std::vector<VqLosses> train_vq(VqModel& m, std::span<const img::Image> images,
                               std::size_t steps, double lr) {
  Adam opt(m.all(), AdamConfig{.lr = lr});
  std::vector<VqLosses> history;
  history.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i)
    history.push_back(vq_train_step(m, images, opt));
  m.trained = true;
  return history;
}

model::MultimodalSample make_t2i_sample(std::span<const int> text_ids,
                                        const CodeGrid& grid,
                                        std::size_t text_vocab,
                                        std::size_t max_len) {
  if (grid.ids.size() != grid.rows * grid.cols || grid.ids.empty())
    throw std::invalid_argument("make_t2i_sample: bad code grid");
  std::size_t total = 2 + text_ids.size() + grid.ids.size();
  if (total > max_len)
    throw std::invalid_argument("make_t2i_sample: sequence of " +
                                std::to_string(total) + " exceeds max_len " +
                                std::to_string(max_len));
  model::MultimodalSample s;
  s.causal_ids.reserve(total);
  s.causal_ids.push_back(tok::BOS);
  for (int id : text_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= text_vocab)
      throw std::out_of_range("make_t2i_sample: text id outside text vocab");
    s.causal_ids.push_back(id);
  }
  s.causal_ids.push_back(tok::SEP);
  for (int id : grid.ids)
    s.causal_ids.push_back(static_cast<int>(text_vocab) + id);

  s.targets.assign(total, kIgnoreId);
  for (std::size_t i = 0; i + 1 < total; ++i) {
    int next = s.causal_ids[i + 1];
    if (next >= static_cast<int>(text_vocab)) s.targets[i] = next;
  }
  s.task = "t2i";
  return s;
}

CodeGrid sample_codes(const model::Parameters& params,
                      std::span<const int> text_ids, std::size_t text_vocab,
                      std::size_t codebook_size, std::size_t rows,
                      std::size_t cols, std::size_t top_k, double temperature,
                      Rng& rng) {
  if (top_k == 0) throw std::invalid_argument("sample_codes: top_k must be >= 1");
  if (params.cfg.vocab_size < text_vocab + codebook_size)
    throw std::invalid_argument(
        "sample_codes: model vocab too small for the code range");
  CodeGrid grid;
  grid.rows = rows;
  grid.cols = cols;

  model::MultimodalSample s;
  s.causal_ids.reserve(2 + text_ids.size() + rows * cols);
  s.causal_ids.push_back(tok::BOS);
  s.causal_ids.insert(s.causal_ids.end(), text_ids.begin(), text_ids.end());
  s.causal_ids.push_back(tok::SEP);

  std::size_t k = std::min(top_k, codebook_size);
  for (std::size_t step = 0; step < rows * cols; ++step) {
    model::ForwardResult fr = model::forward(s, params);
    std::size_t last = s.causal_ids.size() - 1;
    // candidates restricted to the code range, ranked by logit with
    // ties to the lower id
    std::vector<std::pair<double, std::size_t>> cand;
    cand.reserve(codebook_size);
    for (std::size_t c = 0; c < codebook_size; ++c)
      cand.emplace_back(fr.logits.at(last, text_vocab + c), c);
    std::stable_sort(cand.begin(), cand.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    cand.resize(k);

    std::size_t chosen;
    if (temperature <= 0.0 || k == 1) {
      chosen = cand[0].second;
    } else {
      double mx = cand[0].first;
      std::vector<double> probs(k);
      for (std::size_t i = 0; i < k; ++i)
        probs[i] = std::exp((cand[i].first - mx) / temperature);
      chosen = cand[rng.sample_discrete(probs)].second;
    }
    grid.ids.push_back(static_cast<int>(chosen));
    s.causal_ids.push_back(static_cast<int>(text_vocab + chosen));
  }
  return grid;
}

img::Image generate_image(const VqModel& vq_model,
                          const model::Parameters& params,
                          std::span<const int> text_ids, std::size_t text_vocab,
                          std::size_t top_k, double temperature, Rng& rng) {
  std::size_t side = vq_model.cfg.grid_side();
  CodeGrid grid =
      sample_codes(params, text_ids, text_vocab, vq_model.cfg.codebook_size,
                   side, side, top_k, temperature, rng);
  return vq_decode(vq_model, grid);
}

std::vector<double> train_t2i(model::Parameters& params,
                              std::span<const model::MultimodalSample> samples,
                              std::size_t steps, std::size_t batch_size,
                              double lr, std::uint64_t seed) {
  if (samples.empty()) throw std::invalid_argument("train_t2i: no samples");
  if (batch_size == 0) throw std::invalid_argument("train_t2i: batch_size 0");
  Rng rng(seed);
  Adam opt(params.all(), AdamConfig{.lr = lr});
  std::vector<double> history;
  history.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    std::vector<model::MultimodalSample> raw;
    raw.reserve(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b)
      raw.push_back(samples[rng.randint(samples.size())]);
    pretrain::Batch batch = pretrain::make_batch(raw);
    Tensor ce_sum;
    for (std::size_t b = 0; b < batch.samples.size(); ++b) {
      model::ForwardResult fr =
          model::forward(batch.samples[b], params, &batch.masks[b]);
      Tensor ce = cross_entropy(fr.logits, batch.samples[b].targets);
      ce_sum = ce_sum.defined() ? add(ce_sum, ce) : ce;
    }
    Tensor loss = scale(ce_sum, 1.0 / static_cast<double>(batch.samples.size()));
    opt.zero_grad();
    backward(loss);
    opt.step();
    history.push_back(loss.item());
  }
  return history;
}

}  // namespace m6::vq
