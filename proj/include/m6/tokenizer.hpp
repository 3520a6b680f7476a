#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace m6::tok {

/// Fixed special token ids. A vocab file stores one token per line and
/// the line number is the id, so these six are always the first lines.
enum SpecialId : int { PAD = 0, UNK = 1, MASK = 2, BOS = 3, EOS = 4, SEP = 5 };

constexpr std::size_t kNumSpecials = 6;
const std::array<std::string_view, kNumSpecials>& special_tokens();

class Vocab {
 public:
  /// Builds from token strings; the first six must be the specials.
  explicit Vocab(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  /// Token id, or UNK when unknown.
  int id_of(std::string_view token) const;
  bool contains(std::string_view token) const;
  /// Throws std::out_of_range for ids outside the table.
  const std::string& token(int id) const;

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string_view, int> index_;
};

/// One pre-tokenization unit: a CJK character, a run of Latin letters
/// or digits (lowercased), or a single punctuation mark. Whitespace
/// separates units and is dropped.
std::vector<std::string> segment_units(std::string_view text);

/// Canonical rendering of a unit sequence; decode() and the
/// encode/decode round trip are defined against this form.
std::string render_units(std::span<const std::string> units);

/// Vocabulary construction: specials, then every observed single
/// character (words contribute both a word-initial and a "##"
/// continuation form), then merged word pieces grown by repeatedly
/// joining the most frequent adjacent pair with count >= min_freq.
/// CJK characters are never merged. Result is capped at target_size.
Vocab build_vocab(std::span<const std::string> corpus_lines,
                  std::size_t target_size, std::size_t min_freq = 2);

/// Greedy longest-match-first encoding. A word with any unmatchable
/// remainder encodes to a single UNK. Never emits special ids.
std::vector<int> encode(std::string_view text, const Vocab& vocab);

/// Inverse of encode up to UNK and normalization: strips PAD, stops at
/// the first EOS, joins "##" continuations.
std::string decode(std::span<const int> ids, const Vocab& vocab);

}  // namespace m6::tok
