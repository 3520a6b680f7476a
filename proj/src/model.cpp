#include "m6/model.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "m6/rng.hpp"
#include "m6/serialize.hpp"

namespace m6::model {

namespace {

constexpr double kMaskedScore = -1e9;

/// Additive attention bias: 0 where attending is allowed, a large
/// negative constant where it is not.
Tensor mask_bias(const AttentionMask& mask) {
  std::size_t n = mask.n;
  std::vector<double> b(n * n, 0.0);
  for (std::size_t i = 0; i < n * n; ++i)
    if (!mask.allowed[i]) b[i] = kMaskedScore;
  return Tensor::from_data({n, n}, std::move(b));
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size == 0) throw std::invalid_argument("config: vocab_size must be positive");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
    throw std::invalid_argument("config: d_model must be a positive multiple of n_heads");
  if (max_len == 0) throw std::invalid_argument("config: max_len must be positive");
  if (ffn_mult == 0) throw std::invalid_argument("config: ffn_mult must be positive");
  if (patch_dim == 0) throw std::invalid_argument("config: patch_dim must be positive");
  if (n_experts == 0) throw std::invalid_argument("config: n_experts must be positive");
  if (n_experts > 1) {
    if (moe_top_k == 0 || moe_top_k > n_experts)
      throw std::invalid_argument("config: moe_top_k must be in [1, n_experts]");
    if (!(capacity_factor > 0.0))
      throw std::invalid_argument("config: capacity_factor must be positive");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"schema_version", c.schema_version},
                     {"n_layers", c.n_layers},
                     {"d_model", c.d_model},
                     {"n_heads", c.n_heads},
                     {"n_experts", c.n_experts},
                     {"vocab_size", c.vocab_size},
                     {"max_len", c.max_len},
                     {"patch_dim", c.patch_dim},
                     {"ffn_mult", c.ffn_mult},
                     {"moe_top_k", c.moe_top_k},
                     {"capacity_factor", c.capacity_factor},
                     {"aux_loss_coef", c.aux_loss_coef}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.schema_version = j.value("schema_version", c.schema_version);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_experts = j.value("n_experts", c.n_experts);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_len = j.value("max_len", c.max_len);
  c.patch_dim = j.value("patch_dim", c.patch_dim);
  c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
  c.moe_top_k = j.value("moe_top_k", c.moe_top_k);
  c.capacity_factor = j.value("capacity_factor", c.capacity_factor);
  c.aux_loss_coef = j.value("aux_loss_coef", c.aux_loss_coef);
}

AttentionMask build_mask(const SegmentLayout& layout) {
  std::size_t nb = layout.n_visual + layout.n_masked;
  std::size_t n = layout.total();
  AttentionMask m;
  m.n = n;
  m.allowed.assign(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    // every position sees the whole bidirectional block
    for (std::size_t j = 0; j < nb; ++j) m.set(i, j, true);
    // causal positions additionally see earlier causal positions
    if (i >= nb)
      for (std::size_t j = nb; j <= i; ++j) m.set(i, j, true);
  }
  return m;
}

Parameters Parameters::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  Parameters p;
  p.cfg = cfg;
  std::size_t d = cfg.d_model;
  std::size_t hidden = cfg.ffn_mult * d;
  double emb_s = 0.02;
  double proj_s = 1.0 / std::sqrt(static_cast<double>(d));
  double hid_s = 1.0 / std::sqrt(static_cast<double>(hidden));

  p.tok_embed = Tensor::randn({cfg.vocab_size, d}, rng, emb_s);
  p.seg_embed = Tensor::randn({3, d}, rng, emb_s);
  p.pos_embed = Tensor::randn({cfg.max_len, d}, rng, emb_s);
  p.patch_proj = Tensor::randn({cfg.patch_dim, d}, rng, proj_s);
  p.final_g = Tensor::full({1, d}, 1.0);
  p.final_b = Tensor::zeros({1, d});

  p.layers.resize(cfg.n_layers);
  for (LayerParams& lp : p.layers) {
    lp.ln1_g = Tensor::full({1, d}, 1.0);
    lp.ln1_b = Tensor::zeros({1, d});
    lp.wq = Tensor::randn({d, d}, rng, proj_s);
    lp.bq = Tensor::zeros({1, d});
    lp.wk = Tensor::randn({d, d}, rng, proj_s);
    lp.bk = Tensor::zeros({1, d});
    lp.wv = Tensor::randn({d, d}, rng, proj_s);
    lp.bv = Tensor::zeros({1, d});
    lp.wo = Tensor::randn({d, d}, rng, proj_s);
    lp.bo = Tensor::zeros({1, d});
    lp.ln2_g = Tensor::full({1, d}, 1.0);
    lp.ln2_b = Tensor::zeros({1, d});
    if (cfg.n_experts == 1) {
      lp.w1 = Tensor::randn({d, hidden}, rng, proj_s);
      lp.b1 = Tensor::zeros({1, hidden});
      lp.w2 = Tensor::randn({hidden, d}, rng, hid_s);
      lp.b2 = Tensor::zeros({1, d});
    } else {
      lp.gate_w = Tensor::randn({d, cfg.n_experts}, rng, proj_s);
      lp.bank = moe::make_bank(cfg.n_experts, d, hidden, rng);
    }
  }
  for (Tensor t : p.all()) t.set_requires_grad(true);
  return p;
}

std::vector<std::pair<std::string, Tensor>> Parameters::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("tok_embed", tok_embed);
  out.emplace_back("seg_embed", seg_embed);
  out.emplace_back("pos_embed", pos_embed);
  out.emplace_back("patch_proj", patch_proj);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerParams& lp = layers[i];
    std::string pre = "layer" + std::to_string(i) + ".";
    out.emplace_back(pre + "ln1_g", lp.ln1_g);
    out.emplace_back(pre + "ln1_b", lp.ln1_b);
    out.emplace_back(pre + "wq", lp.wq);
    out.emplace_back(pre + "bq", lp.bq);
    out.emplace_back(pre + "wk", lp.wk);
    out.emplace_back(pre + "bk", lp.bk);
    out.emplace_back(pre + "wv", lp.wv);
    out.emplace_back(pre + "bv", lp.bv);
    out.emplace_back(pre + "wo", lp.wo);
    out.emplace_back(pre + "bo", lp.bo);
    out.emplace_back(pre + "ln2_g", lp.ln2_g);
    out.emplace_back(pre + "ln2_b", lp.ln2_b);
    if (cfg.n_experts == 1) {
      out.emplace_back(pre + "w1", lp.w1);
      out.emplace_back(pre + "b1", lp.b1);
      out.emplace_back(pre + "w2", lp.w2);
      out.emplace_back(pre + "b2", lp.b2);
    } else {
      out.emplace_back(pre + "gate_w", lp.gate_w);
      for (std::size_t e = 0; e < lp.bank.size(); ++e) {
        std::string ep = pre + "expert" + std::to_string(e) + ".";
        const moe::Expert& ex = lp.bank.experts[e];
        out.emplace_back(ep + "w1", ex.w1);
        out.emplace_back(ep + "b1", ex.b1);
        out.emplace_back(ep + "w2", ex.w2);
        out.emplace_back(ep + "b2", ex.b2);
      }
    }
  }
  out.emplace_back("final_g", final_g);
  out.emplace_back("final_b", final_b);
  return out;
}

std::vector<Tensor> Parameters::all() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

void Parameters::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  save_tensors(dir / "model.m6t", named());
  nlohmann::json j = cfg;
  std::ofstream f(dir / "model.json");
  if (!f) throw std::runtime_error("cannot write " + (dir / "model.json").string());
  f << j.dump(2) << "\n";
}

Parameters Parameters::load(const std::filesystem::path& dir) {
  std::ifstream f(dir / "model.json");
  if (!f) throw std::runtime_error("cannot read " + (dir / "model.json").string());
  nlohmann::json j = nlohmann::json::parse(f);
  ModelConfig cfg = j.get<ModelConfig>();
  cfg.validate();

  auto tensors = load_tensors(dir / "model.m6t");
  auto take = [&](const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw std::runtime_error("checkpoint is missing tensor " + name);
    Tensor t = it->second;
    t.set_requires_grad(true);
    return t;
  };

  Parameters p;
  p.cfg = cfg;
  p.tok_embed = take("tok_embed");
  p.seg_embed = take("seg_embed");
  p.pos_embed = take("pos_embed");
  p.patch_proj = take("patch_proj");
  if (p.tok_embed.dim(0) != cfg.vocab_size || p.tok_embed.dim(1) != cfg.d_model)
    throw std::runtime_error("checkpoint: token embedding shape disagrees with config");
  p.layers.resize(cfg.n_layers);
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    LayerParams& lp = p.layers[i];
    std::string pre = "layer" + std::to_string(i) + ".";
    lp.ln1_g = take(pre + "ln1_g");
    lp.ln1_b = take(pre + "ln1_b");
    lp.wq = take(pre + "wq");
    lp.bq = take(pre + "bq");
    lp.wk = take(pre + "wk");
    lp.bk = take(pre + "bk");
    lp.wv = take(pre + "wv");
    lp.bv = take(pre + "bv");
    lp.wo = take(pre + "wo");
    lp.bo = take(pre + "bo");
    lp.ln2_g = take(pre + "ln2_g");
    lp.ln2_b = take(pre + "ln2_b");
    if (cfg.n_experts == 1) {
      lp.w1 = take(pre + "w1");
      lp.b1 = take(pre + "b1");
      lp.w2 = take(pre + "w2");
      lp.b2 = take(pre + "b2");
    } else {
      lp.gate_w = take(pre + "gate_w");
      lp.bank.experts.resize(cfg.n_experts);
      for (std::size_t e = 0; e < cfg.n_experts; ++e) {
        std::string ep = pre + "expert" + std::to_string(e) + ".";
        moe::Expert& ex = lp.bank.experts[e];
        ex.w1 = take(ep + "w1");
        ex.b1 = take(ep + "b1");
        ex.w2 = take(ep + "w2");
        ex.b2 = take(ep + "b2");
      }
    }
  }
  p.final_g = take("final_g");
  p.final_b = take("final_b");
  return p;
}

std::size_t param_count(const ModelConfig& cfg) {
  std::size_t d = cfg.d_model;
  std::size_t hidden = cfg.ffn_mult * d;
  std::size_t e = cfg.n_experts;
  std::size_t n = 0;
  n += cfg.vocab_size * d;  // token table, reused as the output head
  n += 3 * d;               // segment rows
  n += cfg.max_len * d;     // positions
  n += cfg.patch_dim * d;   // patch projection
  n += 2 * d;               // final norm
  std::size_t ffn_params = d * hidden + hidden + hidden * d + d;
  std::size_t per_layer = 4 * d              // two norms
                          + 4 * (d * d + d); // q, k, v, o
  per_layer += e == 1 ? ffn_params : d * e + e * ffn_params;
  return n + cfg.n_layers * per_layer;
}

Tensor embed(const MultimodalSample& sample, const Parameters& params) {
  const ModelConfig& cfg = params.cfg;
  SegmentLayout lay = sample.layout();
  std::size_t total = lay.total();
  if (total == 0) throw std::invalid_argument("embed: sample has no positions");
  if (total > cfg.max_len)
    throw std::invalid_argument("embed: sequence of " + std::to_string(total) +
                                " exceeds max_len " + std::to_string(cfg.max_len));

  std::vector<Tensor> parts;
  if (lay.n_visual > 0) {
    if (sample.patches.ndim() != 2 || sample.patches.dim(1) != cfg.patch_dim)
      throw std::invalid_argument("embed: patches must be [n, patch_dim]");
    parts.push_back(matmul(sample.patches, params.patch_proj));
  }
  if (lay.n_masked > 0)
    parts.push_back(embedding_rows(params.tok_embed, sample.masked_ids));
  if (lay.n_causal > 0)
    parts.push_back(embedding_rows(params.tok_embed, sample.causal_ids));
  Tensor x = parts.size() == 1 ? parts[0] : concat_rows(parts);

  std::vector<int> seg_ids(total), pos_ids(total);
  for (std::size_t i = 0; i < total; ++i) {
    seg_ids[i] = i < lay.n_visual ? 0 : i < lay.n_visual + lay.n_masked ? 1 : 2;
    pos_ids[i] = static_cast<int>(i);
  }
  x = add(x, embedding_rows(params.seg_embed, seg_ids));
  x = add(x, embedding_rows(params.pos_embed, pos_ids));
  return x;
}

Tensor attention(const Tensor& x, const AttentionMask& mask,
                 const LayerParams& lp, std::size_t n_heads) {
  std::size_t T = x.dim(0);
  std::size_t d = x.dim(1);
  if (mask.n != T) throw std::invalid_argument("attention: mask size mismatch");
  std::size_t dh = d / n_heads;

  Tensor h = layer_norm(x, lp.ln1_g, lp.ln1_b);
  Tensor q = add_rowvec(matmul(h, lp.wq), lp.bq);
  Tensor k = add_rowvec(matmul(h, lp.wk), lp.bk);
  Tensor v = add_rowvec(matmul(h, lp.wv), lp.bv);
  Tensor bias = mask_bias(mask);
  double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t hd = 0; hd < n_heads; ++hd) {
    Tensor qh = slice_cols(q, hd * dh, dh);
    Tensor kh = slice_cols(k, hd * dh, dh);
    Tensor vh = slice_cols(v, hd * dh, dh);
    Tensor scores = add(scale(matmul_nt(qh, kh), inv_scale), bias);
    heads.push_back(matmul(softmax(scores, 1), vh));
  }
  Tensor cat = n_heads == 1 ? heads[0] : concat_cols(heads);
  return add(x, add_rowvec(matmul(cat, lp.wo), lp.bo));
}

ForwardResult forward(const MultimodalSample& sample, const Parameters& params,
                      const AttentionMask* mask_override) {
  const ModelConfig& cfg = params.cfg;
  Tensor x = embed(sample, params);

  AttentionMask own;
  const AttentionMask* mask = mask_override;
  if (mask == nullptr) {
    own = build_mask(sample.layout());
    mask = &own;
  }

  ForwardResult out;
  std::vector<Tensor> aux_terms;
  for (const LayerParams& lp : params.layers) {
    x = attention(x, *mask, lp, cfg.n_heads);
    Tensor h2 = layer_norm(x, lp.ln2_g, lp.ln2_b);
    if (cfg.n_experts == 1) {
      x = add(x, moe::ffn(h2, lp.w1, lp.b1, lp.w2, lp.b2));
    } else {
      moe::MoeOut mo = moe::apply(h2, lp.gate_w, lp.bank, cfg.moe_top_k,
                                  cfg.capacity_factor);
      x = add(x, mo.y);
      aux_terms.push_back(mo.aux);
      out.stats.drop_rate += mo.drop_rate;
      if (out.stats.expert_load.empty())
        out.stats.expert_load.assign(cfg.n_experts, 0);
      for (std::size_t e = 0; e < cfg.n_experts; ++e)
        out.stats.expert_load[e] += mo.expert_load[e];
      out.stats.comm_cost += mo.comm_cost;
    }
  }
  x = layer_norm(x, params.final_g, params.final_b);
  out.logits = matmul_nt(x, params.tok_embed);

  if (aux_terms.empty()) {
    out.aux_loss = Tensor::scalar(0.0);
  } else {
    Tensor s = aux_terms[0];
    for (std::size_t i = 1; i < aux_terms.size(); ++i) s = add(s, aux_terms[i]);
    out.aux_loss = scale(s, 1.0 / static_cast<double>(aux_terms.size()));
    out.stats.drop_rate /= static_cast<double>(aux_terms.size());
  }
  out.stats.aux_loss = out.aux_loss.item();
  return out;
}

}  // namespace m6::model
