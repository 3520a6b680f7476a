#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "m6/evalgen.hpp"
#include "m6/pretrain.hpp"
#include "m6/rng.hpp"
#include "m6/tokenizer.hpp"
#include "testutil.hpp"

using namespace m6;
using evalgen::DecodeConfig;
using evalgen::StepFn;
using evalgen::Strategy;

namespace {

/// Deterministic pseudo-random logit table keyed on (seed, ids, token).
StepFn hash_step(std::uint64_t seed, std::size_t vocab) {
  return [seed, vocab](std::span<const int> ids) {
    std::vector<double> out(vocab);
    for (std::size_t v = 0; v < vocab; ++v) {
      std::uint64_t h = seed * 0x9e3779b97f4a7c15ULL + 0x243f6a8885a308d3ULL;
      for (int t : ids)
        h ^= static_cast<std::uint64_t>(t) + 0x9e3779b97f4a7c15ULL + (h << 6) +
             (h >> 2);
      h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
      h *= 0xff51afd7ed558ccdULL;
      h ^= h >> 33;
      out[v] = static_cast<double>(h % 2000000011ULL) / 2.0e8;  // ~[0, 10)
    }
    return out;
  };
}

/// Explicit logit table with a flat fallback for unlisted prefixes.
StepFn table_step(std::map<std::vector<int>, std::vector<double>> table,
                  std::size_t vocab) {
  return [table = std::move(table), vocab](std::span<const int> ids) {
    std::vector<int> key(ids.begin(), ids.end());
    auto it = table.find(key);
    if (it != table.end()) return it->second;
    return std::vector<double>(vocab, 0.0);
  };
}

std::vector<double> local_log_softmax(std::span<const double> logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

/// Exhaustive search over every generation the beam could produce:
/// sequences ending in EOS are scored logp / (len + 1), budget-limited
/// survivors logp / len; the best normalized score wins.
struct BeamOracle {
  const StepFn& step;
  std::size_t max_new;
  double best = 0.0;
  std::vector<int> best_gen;
  bool have = false;

  void consider(double score, const std::vector<int>& gen) {
    if (!have || score > best) {
      best = score;
      best_gen = gen;
      have = true;
    }
  }

  void walk(std::vector<int>& ids, std::vector<int>& gen, double logp) {
    std::vector<double> lp = local_log_softmax(step(ids));
    consider((logp + lp[tok::EOS]) / static_cast<double>(gen.size() + 1), gen);
    for (std::size_t v = 0; v < lp.size(); ++v) {
      if (static_cast<int>(v) == tok::EOS) continue;
      gen.push_back(static_cast<int>(v));
      ids.push_back(static_cast<int>(v));
      double np = logp + lp[v];
      if (gen.size() == max_new)
        consider(np / static_cast<double>(gen.size()), gen);
      else
        walk(ids, gen, np);
      gen.pop_back();
      ids.pop_back();
    }
  }
};

tok::Vocab chinese_vocab(std::vector<std::string> corpus) {
  return tok::build_vocab(corpus, 4000, 1);
}

model::ModelConfig tiny_cfg(std::size_t vocab) {
  model::ModelConfig c;
  c.n_layers = 1;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_experts = 1;
  c.vocab_size = vocab;
  c.max_len = 64;
  c.patch_dim = 12;
  c.ffn_mult = 2;
  return c;
}

std::string repeat_cycle(std::string_view chars_joined,
                         const std::vector<std::string>& chars, std::size_t n) {
  (void)chars_joined;
  std::string out;
  for (std::size_t i = 0; i < n; ++i) out += chars[i % chars.size()];
  return out;
}

}  // namespace

TEST_CASE("greedy decoding follows the table and stops at EOS") {
  std::map<std::vector<int>, std::vector<double>> t;
  auto logits_max_at = [](std::size_t vocab, std::size_t where) {
    std::vector<double> v(vocab, -1.0);
    v[where] = 3.0;
    return v;
  };
  t[{tok::BOS}] = logits_max_at(12, 7);
  t[{tok::BOS, 7}] = logits_max_at(12, 9);
  t[{tok::BOS, 7, 9}] = logits_max_at(12, tok::EOS);
  StepFn step = table_step(std::move(t), 12);

  DecodeConfig cfg;
  cfg.strategy = Strategy::greedy;
  cfg.max_new_tokens = 10;
  Rng rng(0);
  std::vector<int> prefix{tok::BOS};
  std::vector<int> out = evalgen::decode(step, prefix, cfg, rng);
  CHECK(out == std::vector<int>{7, 9});

  // Budget cut-off without EOS.
  std::map<std::vector<int>, std::vector<double>> t2;
  t2[{tok::BOS}] = logits_max_at(12, 7);
  StepFn step2 = table_step(std::move(t2), 12);
  cfg.max_new_tokens = 3;
  std::vector<int> out2 = evalgen::decode(step2, prefix, cfg, rng);
  CHECK(out2.size() == 3);
  CHECK(out2[0] == 7);
  CHECK(out2[1] == 0);  // flat fallback, lowest id wins
  CHECK(out2[2] == 0);

  CHECK_THROWS(evalgen::decode(step, {}, cfg, rng));
}

TEST_CASE("beam search keeps a delayed-reward path greedy misses") {
  std::map<std::vector<int>, std::vector<double>> t;
  std::vector<double> start(6, -5.0);
  start[0] = 2.0;
  start[1] = 1.9;
  t[{tok::BOS}] = start;
  std::vector<double> after1(6, -10.0);
  after1[tok::EOS] = 10.0;
  t[{tok::BOS, 1}] = after1;
  StepFn step = table_step(std::move(t), 6);

  Rng rng(0);
  std::vector<int> prefix{tok::BOS};
  DecodeConfig greedy;
  greedy.strategy = Strategy::greedy;
  greedy.max_new_tokens = 3;
  std::vector<int> g = evalgen::decode(step, prefix, greedy, rng);
  REQUIRE_FALSE(g.empty());
  CHECK(g[0] == 0);

  DecodeConfig beam;
  beam.strategy = Strategy::beam;
  beam.beam_size = 2;
  beam.max_new_tokens = 3;
  std::vector<int> b = evalgen::decode(step, prefix, beam, rng);
  CHECK(b == std::vector<int>{1});
}

TEST_CASE("beam size one reproduces greedy exactly") {
  std::vector<int> prefix{tok::BOS};
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    StepFn step = hash_step(seed, 9);
    Rng rng(0);
    DecodeConfig greedy;
    greedy.strategy = Strategy::greedy;
    greedy.max_new_tokens = 6;
    DecodeConfig beam;
    beam.strategy = Strategy::beam;
    beam.beam_size = 1;
    beam.max_new_tokens = 6;
    std::vector<int> g = evalgen::decode(step, prefix, greedy, rng);
    std::vector<int> b = evalgen::decode(step, prefix, beam, rng);
    CHECK(g == b);
  }
}

TEST_CASE("a wide-enough beam equals exhaustive search") {
  std::vector<int> prefix{tok::BOS};
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    StepFn step = hash_step(seed, 6);
    DecodeConfig beam;
    beam.strategy = Strategy::beam;
    beam.beam_size = 200;  // >= every candidate at depth <= 3
    beam.max_new_tokens = 3;
    Rng rng(0);
    std::vector<int> b = evalgen::decode(step, prefix, beam, rng);

    BeamOracle oracle{step, 3};
    std::vector<int> ids = prefix;
    std::vector<int> gen;
    oracle.walk(ids, gen, 0.0);
    CHECK(b == oracle.best_gen);
  }
}

TEST_CASE("top-k sampling is seed-deterministic and k=1 is greedy") {
  StepFn step = hash_step(7, 9);
  std::vector<int> prefix{tok::BOS};
  DecodeConfig topk;
  topk.strategy = Strategy::topk;
  topk.k = 3;
  topk.temperature = 1.0;
  topk.max_new_tokens = 5;
  Rng a(5), b(5);
  CHECK(evalgen::decode(step, prefix, topk, a) ==
        evalgen::decode(step, prefix, topk, b));

  DecodeConfig k1 = topk;
  k1.k = 1;
  DecodeConfig greedy;
  greedy.strategy = Strategy::greedy;
  greedy.max_new_tokens = 5;
  Rng c(5), d(5);
  CHECK(evalgen::decode(step, prefix, k1, c) ==
        evalgen::decode(step, prefix, greedy, d));
}

TEST_CASE("perplexity scoring matches the forward pass") {
  model::ModelConfig cfg = tiny_cfg(24);
  Rng rng(13);
  model::Parameters params = model::Parameters::init(cfg, rng);
  std::vector<int> toks{8, 9, 10};
  model::MultimodalSample s = pretrain::make_lm(toks);

  model::ForwardResult fr = model::forward(s, params);
  Tensor ce = cross_entropy(fr.logits, s.targets);
  double want = std::exp(ce.item());
  CHECK(evalgen::score_ppl(params, s) == want);

  model::MultimodalSample hollow = s;
  std::fill(hollow.targets.begin(), hollow.targets.end(), kIgnoreId);
  CHECK_THROWS(evalgen::score_ppl(params, hollow));
}

TEST_CASE("character F1 hand cases") {
  CHECK(evalgen::char_f1("", "") == 1.0);
  CHECK(evalgen::char_f1("abc", "xyz") == 0.0);
  CHECK(evalgen::char_f1("abc", "ab") == doctest::Approx(0.8).epsilon(1e-9));
  CHECK(evalgen::char_f1("aa", "a") ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-9));
  CHECK(evalgen::char_f1("北京", "北京") == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(evalgen::char_f1("好", "很好") ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-9));
  CHECK(evalgen::char_f1("", "abc") == 0.0);
}

TEST_CASE("question prompts") {
  CHECK(evalgen::qa_prompt("这是什么") == "这是什么？回答:");
  CHECK(evalgen::qa_prompt("这是什么？") == "这是什么？回答:");
  CHECK(evalgen::qa_prompt("这是什么？？？") == "这是什么？回答:");
  CHECK(evalgen::qa_prompt("what is this") == "what is this? Answer:");
  CHECK(evalgen::qa_prompt("what is this??") == "what is this? Answer:");
  CHECK_THROWS(evalgen::qa_prompt(""));
  CHECK_THROWS(evalgen::qa_prompt("???"));
  CHECK(evalgen::vqa_prompt("图里有什么") == "图里有什么？回答:");
}

TEST_CASE("tnews: an oracle scorer scores a perfect run") {
  std::vector<std::string> pool{"体育", "娱乐", "科技", "财经", "教育"};
  std::vector<evalgen::TnewsItem> items;
  std::vector<std::string> titles{"球队赢得比赛", "新电影上映", "手机发布",
                                  "股市上涨"};
  std::vector<std::string> golds{"体育", "娱乐", "科技", "财经"};
  for (std::size_t i = 0; i < titles.size(); ++i) {
    evalgen::TnewsItem it;
    it.title = titles[i];
    it.keywords = "新闻";
    it.label = golds[i];
    it.label_pool = pool;
    items.push_back(std::move(it));
  }

  std::vector<std::string> corpus;
  for (const auto& it : items)
    for (const auto& lab : pool) corpus.push_back(evalgen::tnews_prompt(it, lab));
  tok::Vocab vocab = chinese_vocab(corpus);

  std::vector<std::string> gold_prompts;
  for (const auto& it : items)
    gold_prompts.push_back(evalgen::tnews_prompt(it, it.label));

  evalgen::ScoreFn oracle = [&](const model::MultimodalSample& s) {
    REQUIRE_FALSE(s.causal_ids.empty());
    std::span<const int> body{s.causal_ids.data() + 1, s.causal_ids.size() - 1};
    std::string text = tok::decode(body, vocab);
    bool gold = std::find(gold_prompts.begin(), gold_prompts.end(), text) !=
                gold_prompts.end();
    return gold ? 0.5 : 2.0;
  };

  evalgen::EvalResult res = evalgen::eval_tnews(items, vocab, oracle, 42);
  CHECK(res.metric == "accuracy");
  CHECK(res.value == 1.0);
  CHECK(res.n == items.size());
  for (double v : res.per_item) CHECK(v == 1.0);
}

TEST_CASE("tnews: a constant scorer lands near one in four") {
  std::vector<std::string> pool{"体育", "娱乐", "科技", "财经", "教育"};
  std::vector<evalgen::TnewsItem> items;
  for (int i = 0; i < 300; ++i) {
    evalgen::TnewsItem it;
    it.title = "标题";
    it.keywords = "词";
    it.label = pool[static_cast<std::size_t>(i) % pool.size()];
    it.label_pool = pool;
    items.push_back(std::move(it));
  }
  tok::Vocab vocab = chinese_vocab(
      {"标题:标题;关键词:词;分类:体育娱乐科技财经教育"});
  evalgen::ScoreFn flat = [](const model::MultimodalSample&) { return 1.0; };
  evalgen::EvalResult res = evalgen::eval_tnews(items, vocab, flat, 7);
  CHECK(res.value >= 0.17);
  CHECK(res.value <= 0.33);
}

TEST_CASE("tnews: a thin label pool is rejected") {
  evalgen::TnewsItem it;
  it.title = "标题";
  it.keywords = "词";
  it.label = "体育";
  it.label_pool = {"体育", "娱乐", "科技"};  // only two negatives
  std::vector<evalgen::TnewsItem> items{it};
  tok::Vocab vocab = chinese_vocab({"标题:标题;关键词:词;分类:体育娱乐科技"});
  evalgen::ScoreFn flat = [](const model::MultimodalSample&) { return 1.0; };
  CHECK_THROWS(evalgen::eval_tnews(items, vocab, flat, 1));
}

TEST_CASE("chid: short passage builds the expected sample") {
  evalgen::ChidItem it;
  it.passage = "他今天心情。";  // blank after 心情
  it.blank_idx = 5;
  it.candidates = {"非常愉快", "十分低落"};
  it.gold = 0;
  std::vector<evalgen::ChidItem> items{it};

  tok::Vocab vocab =
      chinese_vocab({"他今天心情。非常愉快十分低落"});
  std::vector<int> prefix = tok::encode("他今天心情", vocab);
  std::vector<int> suffix = tok::encode("。", vocab);
  std::vector<int> gold_ids = tok::encode("非常愉快", vocab);

  std::vector<model::MultimodalSample> seen;
  evalgen::ScoreFn spy = [&](const model::MultimodalSample& s) {
    seen.push_back(s);
    auto hit = std::search(s.causal_ids.begin(), s.causal_ids.end(),
                           gold_ids.begin(), gold_ids.end());
    return hit != s.causal_ids.end() ? 0.5 : 2.0;
  };

  evalgen::EvalResult res = evalgen::eval_chid(items, vocab, spy);
  CHECK(res.value == 1.0);
  REQUIRE(seen.size() == 2);

  // Bidirectional side: passage with one MASK at the blank.
  std::vector<int> want_masked = prefix;
  want_masked.push_back(tok::MASK);
  want_masked.insert(want_masked.end(), suffix.begin(), suffix.end());
  CHECK(seen[0].masked_ids == want_masked);

  // Causal side: BOS then the passage with the candidate spliced in.
  std::vector<int> want_causal{tok::BOS};
  want_causal.insert(want_causal.end(), prefix.begin(), prefix.end());
  want_causal.insert(want_causal.end(), gold_ids.begin(), gold_ids.end());
  want_causal.insert(want_causal.end(), suffix.begin(), suffix.end());
  CHECK(seen[0].causal_ids == want_causal);
  CHECK(seen[0].targets.back() == tok::EOS);
}

TEST_CASE("chid: long passages are windowed around the blank") {
  std::vector<std::string> filler{"天", "地", "玄", "黄", "宇", "宙", "洪", "荒"};
  std::string before = repeat_cycle("", filler, 300);
  std::string after = repeat_cycle("", filler, 300);

  evalgen::ChidItem it;
  it.passage = before + after;
  it.blank_idx = 300;
  it.candidates = {"雷电交加", "风和日丽", "冰雪封山"};
  it.gold = 1;
  std::vector<evalgen::ChidItem> items{it};

  tok::Vocab vocab = chinese_vocab(
      {it.passage, "雷电交加", "风和日丽", "冰雪封山"});
  std::vector<int> gold_ids = tok::encode("风和日丽", vocab);

  std::size_t seen_n = 0;
  bool sizes_ok = true, mask_ok = true;
  evalgen::ScoreFn spy = [&](const model::MultimodalSample& s) {
    ++seen_n;
    sizes_ok = sizes_ok && s.masked_ids.size() == 256 &&
               s.causal_ids.size() == 257;
    std::size_t masks = 0;
    for (int id : s.masked_ids) masks += id == tok::MASK;
    mask_ok = mask_ok && masks == 1;
    auto hit = std::search(s.causal_ids.begin(), s.causal_ids.end(),
                           gold_ids.begin(), gold_ids.end());
    return hit != s.causal_ids.end() ? 0.5 : 2.0;
  };

  evalgen::EvalResult res = evalgen::eval_chid(items, vocab, spy);
  CHECK(res.value == 1.0);
  CHECK(seen_n == 3);
  CHECK(sizes_ok);
  CHECK(mask_ok);
}

TEST_CASE("cmrc: rigged generation and combined score") {
  tok::Vocab vocab = chinese_vocab({"北京是中国的首都。问题:首都是哪里？回答:很好"});
  std::vector<int> good = tok::encode("好", vocab);
  REQUIRE(good.size() == 1);
  int good_id = good[0];

  std::vector<int> first_ids;
  StepFn rig = [&](std::span<const int> ids) {
    if (first_ids.empty()) first_ids.assign(ids.begin(), ids.end());
    std::vector<double> out(static_cast<std::size_t>(vocab.size()), -1.0);
    if (!ids.empty() && ids.back() == good_id)
      out[tok::EOS] = 5.0;
    else
      out[static_cast<std::size_t>(good_id)] = 5.0;
    return out;
  };

  evalgen::CmrcItem a;
  a.paragraph = "北京是中国的首都。";
  a.question = "首都是哪里？";
  a.answers = {"好"};
  evalgen::CmrcItem b = a;
  b.answers = {"很好"};
  std::vector<evalgen::CmrcItem> items{a, b};

  evalgen::EvalResult res = evalgen::eval_cmrc(items, vocab, rig, 8);
  CHECK(res.metric == "f1");
  REQUIRE(res.per_item.size() == 2);
  CHECK(res.per_item[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(res.per_item[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-9));
  CHECK(res.value == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-9));

  // The prompt is paragraph + question cue + normalized question.
  REQUIRE_FALSE(first_ids.empty());
  CHECK(first_ids[0] == tok::BOS);
  std::span<const int> body{first_ids.data() + 1, first_ids.size() - 1};
  CHECK(tok::decode(body, vocab) == "北京是中国的首都。问题:首都是哪里？回答:");
}

TEST_CASE("jsonl loaders") {
  auto dir = testutil::fresh_dir("evalgen_loaders");

  {
    std::ofstream out(dir / "tnews.jsonl", std::ios::binary);
    nlohmann::json j{{"title", "标题一"},
                     {"keywords", "词一"},
                     {"label", "体育"},
                     {"label_pool", {"体育", "娱乐", "科技", "财经"}}};
    out << j.dump() << "\r\n";
    out << "\n";  // blank lines are skipped
    nlohmann::json j2 = j;
    j2["title"] = "标题二";
    out << j2.dump() << "\n";
  }
  auto tn = evalgen::load_tnews(dir / "tnews.jsonl");
  REQUIRE(tn.size() == 2);
  CHECK(tn[0].title == "标题一");
  CHECK(tn[1].title == "标题二");
  CHECK(tn[0].label_pool.size() == 4);

  {
    std::ofstream out(dir / "chid.jsonl", std::ios::binary);
    nlohmann::json j{{"passage", "他今天心情。"},
                     {"blank_idx", 5},
                     {"candidates", {"非常愉快", "十分低落"}},
                     {"gold", 0}};
    out << j.dump() << "\n";
  }
  auto ch = evalgen::load_chid(dir / "chid.jsonl");
  REQUIRE(ch.size() == 1);
  CHECK(ch[0].blank_idx == 5);
  CHECK(ch[0].candidates[1] == "十分低落");

  {
    std::ofstream out(dir / "cmrc.jsonl", std::ios::binary);
    nlohmann::json j{{"paragraph", "段落"},
                     {"question", "问题？"},
                     {"answers", {"答案", "答"}}};
    out << j.dump() << "\n";
  }
  auto cm = evalgen::load_cmrc(dir / "cmrc.jsonl");
  REQUIRE(cm.size() == 1);
  CHECK(cm[0].answers.size() == 2);

  CHECK_THROWS(evalgen::load_tnews(dir / "missing.jsonl"));
}

TEST_CASE("poem validity rules") {
  evalgen::PoemConstraint c;  // 5 chars, 4..16 lines
  auto lines = [](std::initializer_list<const char*> ls) {
    return std::vector<std::string>(ls.begin(), ls.end());
  };
  CHECK(evalgen::poem_valid(
      lines({"白日依山尽", "黄河入海流", "欲穷千里目", "更上一层楼"}), c));
  CHECK_FALSE(evalgen::poem_valid(
      lines({"白日依山尽", "黄河入海流", "欲穷千里目"}), c));  // three lines
  CHECK_FALSE(evalgen::poem_valid(
      lines({"白日依山尽", "黄河入海流", "欲穷千里目", "更上一层楼",
             "白日依山尽"}),
      c));  // odd count
  CHECK_FALSE(evalgen::poem_valid(
      lines({"白日依山尽", "黄河入海流更远", "欲穷千里目", "更上一层楼"}),
      c));  // mixed lengths
  CHECK_FALSE(evalgen::poem_valid({}, c));

  evalgen::PoemConstraint seven;
  seven.line_len = 7;
  std::vector<std::string> sixteen(16, "朝辞白帝彩云间");
  CHECK(evalgen::poem_valid(sixteen, seven));
  std::vector<std::string> eighteen(18, "朝辞白帝彩云间");
  CHECK_FALSE(evalgen::poem_valid(eighteen, seven));

  evalgen::PoemConstraint bad;
  bad.line_len = 6;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("poem generation is valid by construction") {
  tok::Vocab vocab = chinese_vocab(
      {"春眠不觉晓处处闻啼鸟夜来风雨声花落知多少白日依山尽黄河入海流"});
  evalgen::PoemConstraint c;
  StepFn step = hash_step(31, static_cast<std::size_t>(vocab.size()));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto poem = evalgen::poem_generate(step, vocab, "春日", c, 4, 1.0, rng);
    REQUIRE(poem.has_value());
    CHECK(evalgen::poem_valid(*poem, c));
  }

  std::vector<std::string> latin_corpus{"hello world news paper"};
  tok::Vocab latin = tok::build_vocab(latin_corpus, 200, 1);
  Rng rng(1);
  auto none = evalgen::poem_generate(step, latin, "title", c, 4, 1.0, rng);
  CHECK_FALSE(none.has_value());
}

TEST_CASE("poem rendering alternates the two stops") {
  std::vector<std::string> lines{"aaaaa", "bbbbb", "ccccc", "ddddd"};
  CHECK(evalgen::render_poem(lines) == "aaaaa，bbbbb。ccccc，ddddd。");
}

TEST_CASE("result json shape") {
  evalgen::EvalResult r;
  r.metric = "accuracy";
  r.value = 0.5;
  r.n = 2;
  r.per_item = {1.0, 0.0};
  nlohmann::ordered_json j = evalgen::result_json(r);
  CHECK(j.dump() == R"({"metric":"accuracy","value":0.5,"n":2,"per_item":[1.0,0.0]})");
}
