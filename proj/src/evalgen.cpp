#include "m6/evalgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "m6/pretrain.hpp"
#include "m6/tensor.hpp"
#include "m6/unicode.hpp"

namespace m6::evalgen {

namespace {

constexpr std::size_t kChidWindow = 256;

std::vector<double> log_softmax(std::span<const double> logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

std::size_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Indices ranked by value descending, ties by lower index.
std::vector<std::size_t> rank_desc(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  return order;
}

/// Draw one of the k top-ranked entries of `scores` restricted to
/// `pool`; temperature <= 0 or k == 1 degrades to the best entry.
std::size_t pick_from_pool(std::span<const double> scores,
                           std::span<const std::size_t> pool, std::size_t k,
                           double temperature, Rng& rng) {
  std::vector<std::size_t> order(pool.begin(), pool.end());
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  std::size_t kk = std::max<std::size_t>(1, std::min(k, order.size()));
  if (temperature <= 0.0 || kk == 1) return order[0];
  double mx = scores[order[0]];
  std::vector<double> w(kk);
  for (std::size_t i = 0; i < kk; ++i)
    w[i] = std::exp((scores[order[i]] - mx) / temperature);
  return order[rng.sample_discrete(w)];
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("eval: cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::map<char32_t, std::size_t> char_counts(std::string_view text) {
  std::map<char32_t, std::size_t> counts;
  for (char32_t cp : uni::codepoints(text)) ++counts[cp];
  return counts;
}

bool has_cjk(std::string_view text) {
  for (char32_t cp : uni::codepoints(text))
    if (uni::is_cjk(cp)) return true;
  return false;
}

/// Token window [lo, lo+width) around `center`, clamped to [0, len) and
/// widened only as far as needed to keep [keep_begin, keep_end) inside.
std::pair<std::size_t, std::size_t> window_around(std::size_t len,
                                                  std::size_t center,
                                                  std::size_t width,
                                                  std::size_t keep_begin,
                                                  std::size_t keep_end) {
  if (len <= width) return {0, len};
  std::size_t lo = center > width / 2 ? center - width / 2 : 0;
  std::size_t hi = std::min(len, lo + width);
  if (hi - lo < width) lo = hi - width;
  lo = std::min(lo, keep_begin);
  hi = std::max(hi, std::min(len, keep_end));
  return {lo, hi};
}

std::string utf8_slice(std::span<const char32_t> cps, std::size_t begin,
                       std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) uni::append_utf8(out, cps[i]);
  return out;
}

}  // namespace

StepFn model_step_fn(const model::Parameters& params,
                     model::MultimodalSample base) {
  return [&params, base = std::move(base)](std::span<const int> causal) {
    model::MultimodalSample s = base;
    s.causal_ids.assign(causal.begin(), causal.end());
    s.targets.clear();
    model::ForwardResult fr = model::forward(s, params);
    std::size_t last = fr.logits.shape()[0] - 1;
    std::size_t vocab = fr.logits.shape()[1];
    std::vector<double> row(vocab);
    for (std::size_t v = 0; v < vocab; ++v) row[v] = fr.logits.at(last, v);
    return row;
  };
}

std::vector<int> decode(const StepFn& step, std::span<const int> prefix_ids,
                        const DecodeConfig& cfg, Rng& rng) {
  std::vector<int> prefix(prefix_ids.begin(), prefix_ids.end());
  if (prefix.empty()) throw std::invalid_argument("decode: empty prefix");

  if (cfg.strategy == Strategy::greedy || cfg.strategy == Strategy::topk) {
    std::vector<int> gen;
    std::vector<int> ids = prefix;
    for (std::size_t t = 0; t < cfg.max_new_tokens; ++t) {
      std::vector<double> logits = step(ids);
      std::size_t next;
      if (cfg.strategy == Strategy::greedy) {
        next = argmax_lowest(logits);
      } else {
        std::vector<std::size_t> all(logits.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        next = pick_from_pool(logits, all, cfg.k, cfg.temperature, rng);
      }
      if (static_cast<int>(next) == tok::EOS) break;
      gen.push_back(static_cast<int>(next));
      ids.push_back(static_cast<int>(next));
    }
    return gen;
  }

  // Beam search. Active hypotheses advance in lockstep; every selected
  // EOS extension retires to an unbounded finished pool scored by
  // log-probability per generated token (EOS included).
  if (cfg.beam_size == 0) throw std::invalid_argument("decode: beam_size must be positive");
  struct Hyp {
    std::vector<int> gen;
    double logp = 0.0;
  };
  std::vector<Hyp> active{{{}, 0.0}};
  std::vector<std::pair<double, std::vector<int>>> finished;

  for (std::size_t t = 0; t < cfg.max_new_tokens && !active.empty(); ++t) {
    struct Cand {
      std::size_t hyp;
      std::size_t token;
      double logp;
    };
    std::vector<Cand> cands;
    for (std::size_t h = 0; h < active.size(); ++h) {
      std::vector<int> ids = prefix;
      ids.insert(ids.end(), active[h].gen.begin(), active[h].gen.end());
      std::vector<double> lp = log_softmax(step(ids));
      for (std::size_t v = 0; v < lp.size(); ++v)
        cands.push_back({h, v, active[h].logp + lp[v]});
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Cand& a, const Cand& b) { return a.logp > b.logp; });

    std::vector<Hyp> next;
    std::size_t taken = 0;
    for (const Cand& c : cands) {
      if (taken == cfg.beam_size) break;
      ++taken;
      const Hyp& src = active[c.hyp];
      if (static_cast<int>(c.token) == tok::EOS) {
        double norm = c.logp / static_cast<double>(src.gen.size() + 1);
        finished.emplace_back(norm, src.gen);
      } else {
        Hyp ext = src;
        ext.gen.push_back(static_cast<int>(c.token));
        ext.logp = c.logp;
        next.push_back(std::move(ext));
      }
    }
    active = std::move(next);
  }

  // Survivors that never emitted EOS compete normalized by their own
  // length; ties keep the earlier (finished-first) entry.
  double best = 0.0;
  const std::vector<int>* best_gen = nullptr;
  for (const auto& [score, gen] : finished) {
    if (best_gen == nullptr || score > best) {
      best = score;
      best_gen = &gen;
    }
  }
  std::vector<const Hyp*> rest;
  for (const Hyp& h : active) {
    if (h.gen.empty()) continue;
    double norm = h.logp / static_cast<double>(h.gen.size());
    if (best_gen == nullptr || norm > best) {
      best = norm;
      best_gen = &h.gen;
    }
  }
  if (best_gen == nullptr) return {};
  return *best_gen;
}

double score_ppl(const model::Parameters& params,
                 const model::MultimodalSample& sample) {
  bool any = false;
  for (int t : sample.targets)
    if (t != kIgnoreId) any = true;
  if (!any) throw std::invalid_argument("score_ppl: sample has no loss positions");
  model::ForwardResult fr = model::forward(sample, params);
  Tensor ce = cross_entropy(fr.logits, sample.targets);
  return std::exp(ce.item());
}

ScoreFn model_scorer(const model::Parameters& params) {
  return [&params](const model::MultimodalSample& s) { return score_ppl(params, s); };
}

nlohmann::ordered_json result_json(const EvalResult& r) {
  nlohmann::ordered_json j;
  j["metric"] = r.metric;
  j["value"] = r.value;
  j["n"] = r.n;
  j["per_item"] = r.per_item;
  return j;
}

// ----- news-title classification -----

std::vector<TnewsItem> load_tnews(const std::filesystem::path& jsonl) {
  std::vector<TnewsItem> items;
  for (const std::string& line : read_lines(jsonl)) {
    nlohmann::json j = nlohmann::json::parse(line);
    TnewsItem it;
    it.title = j.at("title").get<std::string>();
    it.keywords = j.at("keywords").get<std::string>();
    it.label = j.at("label").get<std::string>();
    it.label_pool = j.at("label_pool").get<std::vector<std::string>>();
    items.push_back(std::move(it));
  }
  return items;
}

std::string tnews_prompt(const TnewsItem& item, std::string_view label) {
  std::string out = "标题:";
  out += item.title;
  out += ";关键词:";
  out += item.keywords;
  out += ";分类:";
  out += label;
  return out;
}

EvalResult eval_tnews(std::span<const TnewsItem> items, const tok::Vocab& vocab,
                      const ScoreFn& score, std::uint64_t seed) {
  constexpr std::size_t kRepeats = 3;
  constexpr std::size_t kNegatives = 3;
  EvalResult res;
  res.metric = "accuracy";
  res.n = items.size();
  res.per_item.assign(items.size(), 0.0);
  if (items.empty()) throw std::invalid_argument("eval_tnews: no items");

  std::size_t correct_total = 0;
  for (std::size_t r = 0; r < kRepeats; ++r) {
    for (std::size_t i = 0; i < items.size(); ++i) {
      const TnewsItem& it = items[i];
      std::vector<std::string> negatives;
      for (const std::string& lab : it.label_pool)
        if (lab != it.label &&
            std::find(negatives.begin(), negatives.end(), lab) == negatives.end())
          negatives.push_back(lab);
      if (negatives.size() < kNegatives)
        throw std::runtime_error(
            "eval_tnews: label pool needs at least 3 labels besides the gold one");

      Rng rng(derive_seed(seed, r * items.size() + i));
      rng.shuffle(negatives);
      std::vector<std::string> cands(negatives.begin(),
                                     negatives.begin() + kNegatives);
      cands.push_back(it.label);
      rng.shuffle(cands);

      std::vector<double> ppl(cands.size());
      for (std::size_t c = 0; c < cands.size(); ++c) {
        std::vector<int> ids = tok::encode(tnews_prompt(it, cands[c]), vocab);
        ppl[c] = score(pretrain::make_lm(ids));
      }
      std::size_t pick = 0;
      for (std::size_t c = 1; c < cands.size(); ++c)
        if (ppl[c] < ppl[pick]) pick = c;
      if (cands[pick] == it.label) {
        ++correct_total;
        res.per_item[i] += 1.0 / kRepeats;
      }
    }
  }
  res.value = static_cast<double>(correct_total) /
              static_cast<double>(kRepeats * items.size());
  return res;
}

// ----- idiom cloze -----

std::vector<ChidItem> load_chid(const std::filesystem::path& jsonl) {
  std::vector<ChidItem> items;
  for (const std::string& line : read_lines(jsonl)) {
    nlohmann::json j = nlohmann::json::parse(line);
    ChidItem it;
    it.passage = j.at("passage").get<std::string>();
    it.blank_idx = j.at("blank_idx").get<std::size_t>();
    it.candidates = j.at("candidates").get<std::vector<std::string>>();
    it.gold = j.at("gold").get<std::size_t>();
    items.push_back(std::move(it));
  }
  return items;
}

EvalResult eval_chid(std::span<const ChidItem> items, const tok::Vocab& vocab,
                     const ScoreFn& score) {
  EvalResult res;
  res.metric = "accuracy";
  res.n = items.size();
  if (items.empty()) throw std::invalid_argument("eval_chid: no items");

  std::size_t correct = 0;
  for (const ChidItem& it : items) {
    std::vector<char32_t> cps = uni::codepoints(it.passage);
    if (it.blank_idx > cps.size())
      throw std::runtime_error("eval_chid: blank offset past end of passage");
    if (it.candidates.empty() || it.gold >= it.candidates.size())
      throw std::runtime_error("eval_chid: bad candidate list");

    std::vector<int> prefix =
        tok::encode(utf8_slice(cps, 0, it.blank_idx), vocab);
    std::vector<int> suffix =
        tok::encode(utf8_slice(cps, it.blank_idx, cps.size()), vocab);

    // Bidirectional view: passage with a MASK at the blank, windowed.
    std::vector<int> enc = prefix;
    enc.push_back(tok::MASK);
    enc.insert(enc.end(), suffix.begin(), suffix.end());
    auto [elo, ehi] = window_around(enc.size(), prefix.size(), kChidWindow,
                                    prefix.size(), prefix.size() + 1);
    std::vector<int> enc_win(enc.begin() + elo, enc.begin() + ehi);

    std::vector<double> ppl(it.candidates.size());
    for (std::size_t c = 0; c < it.candidates.size(); ++c) {
      std::vector<int> cand = tok::encode(it.candidates[c], vocab);
      std::vector<int> dec = prefix;
      dec.insert(dec.end(), cand.begin(), cand.end());
      dec.insert(dec.end(), suffix.begin(), suffix.end());
      std::size_t center = prefix.size() + cand.size() / 2;
      auto [dlo, dhi] =
          window_around(dec.size(), center, kChidWindow, prefix.size(),
                        prefix.size() + cand.size());
      std::vector<int> dec_win(dec.begin() + dlo, dec.begin() + dhi);

      model::MultimodalSample s;
      s.masked_ids = enc_win;
      s.causal_ids.push_back(tok::BOS);
      s.causal_ids.insert(s.causal_ids.end(), dec_win.begin(), dec_win.end());
      s.targets.assign(enc_win.size() + s.causal_ids.size(), kIgnoreId);
      for (std::size_t i = 0; i < dec_win.size(); ++i)
        s.targets[enc_win.size() + i] = dec_win[i];
      s.targets.back() = tok::EOS;
      s.task = "chid";
      ppl[c] = score(s);
    }
    std::size_t pick = 0;
    for (std::size_t c = 1; c < ppl.size(); ++c)
      if (ppl[c] < ppl[pick]) pick = c;
    res.per_item.push_back(pick == it.gold ? 1.0 : 0.0);
    if (pick == it.gold) ++correct;
  }
  res.value = static_cast<double>(correct) / static_cast<double>(items.size());
  return res;
}

// ----- span-free reading comprehension -----

std::vector<CmrcItem> load_cmrc(const std::filesystem::path& jsonl) {
  std::vector<CmrcItem> items;
  for (const std::string& line : read_lines(jsonl)) {
    nlohmann::json j = nlohmann::json::parse(line);
    CmrcItem it;
    it.paragraph = j.at("paragraph").get<std::string>();
    it.question = j.at("question").get<std::string>();
    it.answers = j.at("answers").get<std::vector<std::string>>();
    items.push_back(std::move(it));
  }
  return items;
}

double char_f1(std::string_view generated, std::string_view reference) {
  std::map<char32_t, std::size_t> g = char_counts(generated);
  std::map<char32_t, std::size_t> r = char_counts(reference);
  std::size_t glen = 0, rlen = 0, overlap = 0;
  for (const auto& [cp, n] : g) glen += n;
  for (const auto& [cp, n] : r) rlen += n;
  if (glen == 0 && rlen == 0) return 1.0;
  for (const auto& [cp, n] : g) {
    auto it = r.find(cp);
    if (it != r.end()) overlap += std::min(n, it->second);
  }
  if (overlap == 0) return 0.0;
  double p = static_cast<double>(overlap) / static_cast<double>(glen);
  double rc = static_cast<double>(overlap) / static_cast<double>(rlen);
  return 2.0 * p * rc / (p + rc);
}

EvalResult eval_cmrc(std::span<const CmrcItem> items, const tok::Vocab& vocab,
                     const StepFn& step, std::size_t max_new_tokens) {
  EvalResult res;
  res.metric = "f1";
  res.n = items.size();
  if (items.empty()) throw std::invalid_argument("eval_cmrc: no items");

  DecodeConfig cfg;
  cfg.strategy = Strategy::greedy;
  cfg.max_new_tokens = max_new_tokens;
  Rng rng(0);  // greedy decoding never consumes it

  double total = 0.0;
  for (const CmrcItem& it : items) {
    if (it.answers.empty())
      throw std::runtime_error("eval_cmrc: item has no reference answers");
    std::string prompt = it.paragraph + "问题:" + qa_prompt(it.question);
    std::vector<int> ids{tok::BOS};
    std::vector<int> body = tok::encode(prompt, vocab);
    ids.insert(ids.end(), body.begin(), body.end());
    std::vector<int> gen = decode(step, ids, cfg, rng);
    std::string text = tok::decode(gen, vocab);
    double best = 0.0;
    for (const std::string& ref : it.answers)
      best = std::max(best, char_f1(text, ref));
    res.per_item.push_back(best);
    total += best;
  }
  res.value = total / static_cast<double>(items.size());
  return res;
}

// ----- prompting -----

std::string qa_prompt(std::string_view question) {
  if (question.empty()) throw std::invalid_argument("qa_prompt: empty question");
  std::vector<char32_t> cps = uni::codepoints(question);
  while (!cps.empty() && (cps.back() == U'?' || cps.back() == U'？'))
    cps.pop_back();
  if (cps.empty()) throw std::invalid_argument("qa_prompt: question is only punctuation");
  std::string out = utf8_slice(cps, 0, cps.size());
  if (has_cjk(out)) {
    out += "？回答:";
  } else {
    out += "? Answer:";
  }
  return out;
}

std::string vqa_prompt(std::string_view question) { return qa_prompt(question); }

// ----- constrained poem generation -----

void PoemConstraint::validate() const {
  if (line_len != 5 && line_len != 7)
    throw std::invalid_argument("poem: line length must be 5 or 7");
  if (min_lines < 2 || min_lines % 2 != 0)
    throw std::invalid_argument("poem: min_lines must be even and at least 2");
  if (max_lines < min_lines || max_lines % 2 != 0)
    throw std::invalid_argument("poem: max_lines must be even and >= min_lines");
}

bool poem_valid(std::span<const std::string> lines, const PoemConstraint& c) {
  if (lines.size() < c.min_lines || lines.size() > c.max_lines) return false;
  if (lines.size() % 2 != 0) return false;
  for (const std::string& line : lines)
    if (uni::length(line) != c.line_len) return false;
  return true;
}

std::optional<std::vector<std::string>> poem_generate(
    const StepFn& step, const tok::Vocab& vocab, std::string_view title,
    const PoemConstraint& c, std::size_t top_k, double temperature, Rng& rng,
    std::size_t max_retries) {
  c.validate();

  // Tokens usable inside a line: exactly one CJK character.
  std::vector<std::size_t> char_ids;
  for (int id = tok::kNumSpecials; id < vocab.size(); ++id) {
    std::vector<char32_t> cps = uni::codepoints(vocab.token(id));
    if (cps.size() == 1 && uni::is_cjk(cps[0]))
      char_ids.push_back(static_cast<std::size_t>(id));
  }
  if (char_ids.empty()) return std::nullopt;

  std::vector<int> base{tok::BOS};
  std::vector<int> title_ids = tok::encode(title, vocab);
  base.insert(base.end(), title_ids.begin(), title_ids.end());
  base.push_back(tok::SEP);

  std::size_t attempts = std::max<std::size_t>(1, max_retries);
  for (std::size_t attempt = 0; attempt < attempts; ++attempt) {
    std::vector<int> ids = base;
    std::vector<std::string> lines;
    std::string cur;
    std::size_t cur_len = 0;

    while (lines.size() < c.max_lines) {
      bool may_stop = cur_len == 0 && lines.size() >= c.min_lines &&
                      lines.size() % 2 == 0;
      std::vector<std::size_t> pool = char_ids;
      if (may_stop) pool.push_back(static_cast<std::size_t>(tok::EOS));

      std::vector<double> logits = step(ids);
      std::size_t next = pick_from_pool(logits, pool, top_k, temperature, rng);
      if (static_cast<int>(next) == tok::EOS) break;

      ids.push_back(static_cast<int>(next));
      cur += vocab.token(static_cast<int>(next));
      ++cur_len;
      if (cur_len == c.line_len) {
        lines.push_back(cur);
        cur.clear();
        cur_len = 0;
      }
    }
    if (poem_valid(lines, c)) return lines;
  }
  return std::nullopt;
}

std::string render_poem(std::span<const std::string> lines) {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    out += lines[i];
    out += (i % 2 == 0) ? "，" : "。";
  }
  return out;
}

}  // namespace m6::evalgen
