#include "m6/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>

#include "m6/unicode.hpp"

namespace m6::tok {

const std::array<std::string_view, kNumSpecials>& special_tokens() {
  static const std::array<std::string_view, kNumSpecials> t = {
      "[PAD]", "[UNK]", "[MASK]", "[BOS]", "[EOS]", "[SEP]"};
  return t;
}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < kNumSpecials)
    throw std::invalid_argument("vocab: needs at least the six special tokens");
  for (std::size_t i = 0; i < kNumSpecials; ++i)
    if (tokens_[i] != special_tokens()[i])
      throw std::invalid_argument("vocab: token " + std::to_string(i) +
                                  " must be " +
                                  std::string(special_tokens()[i]));
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<int>(i));
    if (!inserted)
      throw std::invalid_argument("vocab: duplicate token '" + tokens_[i] + "'");
  }
}

int Vocab::id_of(std::string_view token) const {
  auto it = index_.find(token);
  return it == index_.end() ? UNK : it->second;
}

bool Vocab::contains(std::string_view token) const {
  return index_.count(token) > 0;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size())
    throw std::out_of_range("vocab: id " + std::to_string(id) +
                            " outside table of " + std::to_string(size()));
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocab::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  for (const std::string& t : tokens_) os << t << '\n';
  if (!os) throw std::runtime_error("short write to " + path);
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocab(std::move(tokens));
}

std::vector<std::string> segment_units(std::string_view text) {
  std::vector<char32_t> cps;
  if (!uni::decode_utf8(text, cps))
    throw std::invalid_argument("segment_units: malformed UTF-8");
  std::vector<std::string> units;
  std::string word;
  // 0 none, 1 letters, 2 digits, 3 tainted by an out-of-alphabet char
  int run = 0;
  auto flush_word = [&] {
    if (!word.empty()) {
      units.push_back(word);
      word.clear();
    }
    run = 0;
  };
  for (char32_t cp : cps) {
    cp = uni::to_lower(cp);
    if (uni::is_space(cp)) {
      flush_word();
    } else if (uni::is_cjk(cp) || uni::is_punct(cp)) {
      flush_word();
      units.push_back(uni::to_utf8(cp));
    } else if (uni::is_latin_letter(cp) || uni::is_digit(cp)) {
      int cls = uni::is_digit(cp) ? 2 : 1;
      // letters and digits form separate runs; a tainted run keeps going
      if (run != 0 && run != 3 && run != cls) flush_word();
      uni::append_utf8(word, cp);
      if (run != 3) run = cls;
    } else {
      // outside the supported alphabet: taints the run so the whole
      // unit falls through greedy matching to UNK instead of vanishing
      uni::append_utf8(word, cp);
      run = 3;
    }
  }
  flush_word();
  return units;
}

namespace {

bool is_wordlike(std::string_view unit) {
  if (unit.empty()) return false;
  unsigned char c = static_cast<unsigned char>(unit[0]);
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
}

bool is_single_punct(std::string_view unit) {
  auto cps = uni::codepoints(unit);
  return cps.size() == 1 && uni::is_punct(cps[0]);
}

}  // namespace

std::string render_units(std::span<const std::string> units) {
  std::string out;
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (i > 0) {
      bool prev_word = is_wordlike(units[i - 1]);
      bool cur_word = is_wordlike(units[i]);
      bool prev_punct = is_single_punct(units[i - 1]);
      // space between words, and after punctuation before a word
      if (cur_word && (prev_word || prev_punct)) out += ' ';
    }
    out += units[i];
  }
  return out;
}

Vocab build_vocab(std::span<const std::string> corpus_lines,
                  std::size_t target_size, std::size_t min_freq) {
  if (corpus_lines.empty())
    throw std::invalid_argument("build_vocab: empty corpus");
  if (target_size < kNumSpecials)
    throw std::invalid_argument("build_vocab: target_size below " +
                                std::to_string(kNumSpecials));
  if (min_freq == 0)
    throw std::invalid_argument("build_vocab: min_freq must be positive");

  // Unit frequencies; words additionally tracked as symbol sequences
  // for the merge loop ("a" "##b" "##c" style).
  std::map<std::string, std::size_t> char_freq;  // CJK chars and punctuation
  std::map<std::string, std::size_t> word_freq;
  for (const std::string& line : corpus_lines)
    for (const std::string& unit : segment_units(line)) {
      if (is_wordlike(unit))
        ++word_freq[unit];
      else
        ++char_freq[unit];
    }

  std::map<std::string, std::size_t> base_freq = char_freq;
  std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
  for (const auto& [word, freq] : word_freq) {
    std::vector<std::string> syms;
    auto cps = uni::codepoints(word);
    for (std::size_t i = 0; i < cps.size(); ++i) {
      std::string s = i ? "##" : "";
      uni::append_utf8(s, cps[i]);
      syms.push_back(s);
    }
    for (std::size_t i = 0; i < cps.size(); ++i) {
      // both forms of every word character, so greedy matching always
      // has a fallback at any position inside a word
      std::string plain = uni::to_utf8(cps[i]);
      base_freq[plain] += freq;
      base_freq["##" + plain] += freq;
    }
    words.emplace_back(std::move(syms), freq);
  }

  // ordered by frequency (desc) then bytes (asc) for a stable layout
  std::vector<std::pair<std::string, std::size_t>> base(base_freq.begin(),
                                                        base_freq.end());
  std::stable_sort(base.begin(), base.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  std::vector<std::string> tokens;
  for (auto sv : special_tokens()) tokens.emplace_back(sv);
  for (const auto& [t, f] : base) {
    if (tokens.size() >= target_size) break;
    tokens.push_back(t);
  }

  auto strip_cont = [](const std::string& s) {
    return s.rfind("##", 0) == 0 ? s.substr(2) : s;
  };

  while (tokens.size() < target_size) {
    std::map<std::pair<std::string, std::string>, std::size_t> pair_freq;
    for (const auto& [syms, freq] : words)
      for (std::size_t i = 0; i + 1 < syms.size(); ++i)
        pair_freq[{syms[i], syms[i + 1]}] += freq;
    // best pair: highest count; ties go to the smallest merged spelling
    // ignoring the "##" marker, word-initial form first
    std::pair<std::string, std::string> best;
    std::size_t best_count = 0;
    std::pair<std::string, bool> best_key;
    for (const auto& [pr, count] : pair_freq) {
      if (count < min_freq) continue;
      std::string spelled = strip_cont(pr.first) + strip_cont(pr.second);
      std::pair<std::string, bool> key{spelled, pr.first.rfind("##", 0) == 0};
      if (count > best_count || (count == best_count && key < best_key)) {
        best = pr;
        best_count = count;
        best_key = key;
      }
    }
    if (best_count < min_freq) break;

    std::string merged = best.first + strip_cont(best.second);
    for (auto& [syms, freq] : words) {
      std::vector<std::string> next;
      next.reserve(syms.size());
      for (std::size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == best.first &&
            syms[i + 1] == best.second) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(syms[i]);
        }
      }
      syms = std::move(next);
    }
    if (std::find(tokens.begin(), tokens.end(), merged) == tokens.end())
      tokens.push_back(merged);
  }

  return Vocab(std::move(tokens));
}

std::vector<int> encode(std::string_view text, const Vocab& vocab) {
  std::vector<int> ids;
  for (const std::string& unit : segment_units(text)) {
    if (!is_wordlike(unit)) {
      ids.push_back(vocab.contains(unit) ? vocab.id_of(unit) : UNK);
      continue;
    }
    auto cps = uni::codepoints(unit);
    std::vector<int> piece_ids;
    std::size_t start = 0;
    bool ok = true;
    while (start < cps.size()) {
      int match = -1;
      for (std::size_t end = cps.size(); end > start; --end) {
        std::string cand = start ? "##" : "";
        for (std::size_t i = start; i < end; ++i) uni::append_utf8(cand, cps[i]);
        if (vocab.contains(cand)) {
          match = vocab.id_of(cand);
          start = end;
          break;
        }
      }
      if (match < 0) {
        ok = false;
        break;
      }
      piece_ids.push_back(match);
    }
    if (ok)
      ids.insert(ids.end(), piece_ids.begin(), piece_ids.end());
    else
      ids.push_back(UNK);
  }
  return ids;
}

std::string decode(std::span<const int> ids, const Vocab& vocab) {
  std::vector<std::string> units;
  for (int id : ids) {
    const std::string& t = vocab.token(id);  // throws on bad id
    if (id == PAD) continue;
    if (id == EOS) break;
    if (t.rfind("##", 0) == 0 && !units.empty())
      units.back() += t.substr(2);
    else
      units.push_back(t);
  }
  return render_units(units);
}

}  // namespace m6::tok
