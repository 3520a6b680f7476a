#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>
#include <vector>

#include "m6/tokenizer.hpp"
#include "testutil.hpp"

using namespace m6;

TEST_CASE("segment_units: CJK chars, lowered latin runs, digits, punct") {
  auto units = tok::segment_units("你好, World 123！");
  std::vector<std::string> want{"你", "好", ",", "world", "123", "！"};
  CHECK(units == want);

  CHECK(tok::segment_units("   ").empty());
  CHECK(tok::segment_units("").empty());

  // Fullwidth space separates; mixed script splits at boundaries.
  auto mixed = tok::segment_units("GPU芯片　x2");
  std::vector<std::string> want2{"gpu", "芯", "片", "x", "2"};
  CHECK(mixed == want2);
}

TEST_CASE("build_vocab: specials first, then chars, then merges") {
  std::vector<std::string> corpus{"abab", "abab"};
  tok::Vocab v = tok::build_vocab(corpus, 32, 2);
  for (std::size_t i = 0; i < tok::kNumSpecials; ++i)
    CHECK(v.token(static_cast<int>(i)) == tok::special_tokens()[i]);
  CHECK(v.contains("a"));
  CHECK(v.contains("##b"));
  CHECK(v.contains("ab"));  // most frequent adjacent pair, plain form
  CHECK(v.size() <= 32);
}

TEST_CASE("build_vocab: CJK characters never merge") {
  std::vector<std::string> corpus{"你好你好你好", "你好你好"};
  tok::Vocab v = tok::build_vocab(corpus, 64, 2);
  CHECK(v.contains("你"));
  CHECK(v.contains("好"));
  CHECK_FALSE(v.contains("你好"));
}

TEST_CASE("build_vocab: target size caps the table") {
  std::vector<std::string> corpus{"abcdefgh abcdefgh", "abcdefgh"};
  tok::Vocab v = tok::build_vocab(corpus, 10, 2);
  CHECK(v.size() <= 10);
  CHECK(v.size() > static_cast<int>(tok::kNumSpecials));
}

TEST_CASE("encode: greedy longest match, whole-word UNK fallback") {
  std::vector<std::string> corpus{"internet internet", "net net"};
  tok::Vocab v = tok::build_vocab(corpus, 64, 2);

  auto ids = tok::encode("internet", v);
  for (int id : ids) CHECK(id >= static_cast<int>(tok::kNumSpecials));
  CHECK(tok::decode(ids, v) == "internet");

  // A word with an unmatchable character collapses to one UNK.
  auto unk = tok::encode("netπ", v);
  REQUIRE(unk.size() == 1);
  CHECK(unk[0] == tok::UNK);
}

TEST_CASE("encode/decode round trip equals canonical rendering") {
  std::vector<std::string> corpus{"深度学习模型训练", "深度学习很有趣",
                                  "model training 123", "model 123"};
  tok::Vocab v = tok::build_vocab(corpus, 256, 1);
  for (const std::string& line : corpus) {
    auto ids = tok::encode(line, v);
    auto units = tok::segment_units(line);
    CHECK(tok::decode(ids, v) == tok::render_units(units));
  }
}

TEST_CASE("decode: strips PAD, stops at EOS, joins continuations") {
  std::vector<std::string> corpus{"abc abc", "abc"};
  tok::Vocab v = tok::build_vocab(corpus, 64, 2);
  auto ids = tok::encode("abc", v);
  std::vector<int> padded{tok::PAD};
  padded.insert(padded.end(), ids.begin(), ids.end());
  padded.push_back(tok::PAD);
  padded.push_back(tok::EOS);
  padded.push_back(ids.empty() ? tok::PAD : ids[0]);  // after EOS: ignored
  CHECK(tok::decode(padded, v) == "abc");
}

TEST_CASE("vocab save/load round trip") {
  std::vector<std::string> corpus{"你好世界 hello", "你好 hello"};
  tok::Vocab v = tok::build_vocab(corpus, 64, 1);
  auto dir = testutil::fresh_dir("tok_io_work");
  auto path = (dir / "vocab.txt").string();
  v.save(path);
  tok::Vocab w = tok::Vocab::load(path);
  REQUIRE(w.size() == v.size());
  for (int i = 0; i < v.size(); ++i) CHECK(w.token(i) == v.token(i));
  CHECK(tok::encode("你好世界", w) == tok::encode("你好世界", v));
}
