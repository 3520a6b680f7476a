#include "m6/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "m6/image.hpp"
#include "m6/tokenizer.hpp"
#include "m6/unicode.hpp"

namespace m6::corpus {

namespace {

constexpr char32_t kBos = 0x110000;  // outside the codepoint range

std::string read_file_bytes(const std::filesystem::path& file) {
  std::ifstream f(file, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + file.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

bool whitelisted(char32_t cp) {
  if (cp == U'<' || cp == U'>') return false;  // keep the result markup-free
  return uni::is_cjk(cp) || uni::is_latin_letter(cp) || uni::is_digit(cp) ||
         uni::is_space(cp) || uni::is_punct(cp);
}

std::vector<char32_t> collapse_punct(const std::vector<char32_t>& cps) {
  std::vector<char32_t> out;
  out.reserve(cps.size());
  for (char32_t cp : cps) {
    if (!out.empty() && out.back() == cp && uni::is_punct(cp)) continue;
    out.push_back(cp);
  }
  return out;
}

/// Raw byte span of one text block: a maximal run of content that is
/// neither inside a markup tag nor crosses a line break.
struct BlockSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // one past the last byte
};

std::vector<BlockSpan> split_blocks(std::string_view content) {
  std::vector<BlockSpan> blocks;
  std::size_t i = 0;
  std::size_t start = std::string_view::npos;
  auto flush = [&](std::size_t end) {
    if (start != std::string_view::npos && end > start)
      blocks.push_back({start, end});
    start = std::string_view::npos;
  };
  while (i < content.size()) {
    char c = content[i];
    if (c == '<') {
      flush(i);
      std::size_t close = content.find('>', i);
      i = close == std::string_view::npos ? content.size() : close + 1;
      continue;
    }
    if (c == '\n' || c == '\r') {
      flush(i);
      ++i;
      continue;
    }
    if (start == std::string_view::npos) start = i;
    ++i;
  }
  flush(content.size());
  return blocks;
}

/// Byte distance from an image position to a block span; zero inside.
std::size_t block_distance(const BlockSpan& b, std::size_t pos) {
  if (pos < b.begin) return b.begin - pos;
  if (pos >= b.end) return pos - (b.end - 1);
  return 0;
}

struct CandidateBlock {
  BlockSpan span;
  std::string text;  // cleaned
};

constexpr std::size_t kPairWindow = 500;  // bytes
constexpr std::size_t kMinTopicChars = 5;
constexpr std::size_t kMinContentChars = 15;
constexpr long kMinImageArea = 5000;
constexpr double kDegenerateBorderShare = 0.6;

bool takes_image_pairs(Source s) {
  return s == Source::webpage || s == Source::ecommerce ||
         s == Source::encyclopedia;
}

}  // namespace

const char* source_name(Source s) {
  switch (s) {
    case Source::encyclopedia: return "encyclopedia";
    case Source::community_qa: return "community_qa";
    case Source::forum: return "forum";
    case Source::common_crawl: return "common_crawl";
    case Source::webpage: return "webpage";
    case Source::ecommerce: return "ecommerce";
  }
  throw std::logic_error("source_name: bad enum");
}

Source source_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNumSources; ++i) {
    Source s = static_cast<Source>(i);
    if (name == source_name(s)) return s;
  }
  throw std::invalid_argument("unknown source \"" + std::string(name) + "\"");
}

const char* reject_name(Reject r) {
  switch (r) {
    case Reject::none: return "none";
    case Reject::bad_utf8: return "bad_utf8";
    case Reject::topic_too_short: return "topic_too_short";
    case Reject::content_too_short: return "content_too_short";
    case Reject::spam: return "spam";
    case Reject::high_perplexity: return "high_perplexity";
    case Reject::image_too_small: return "image_too_small";
    case Reject::image_degenerate: return "image_degenerate";
    case Reject::image_io: return "image_io";
    case Reject::no_surrounding_text: return "no_surrounding_text";
  }
  throw std::logic_error("reject_name: bad enum");
}

const char* kind_name(Kind k) {
  return k == Kind::plain_text ? "plain_text" : "image_text_pair";
}

NgramLm::NgramLm(int order) : order_(order) {
  if (order < 1) throw std::invalid_argument("ngram order must be at least 1");
}

void NgramLm::add_line(std::string_view line) {
  std::vector<char32_t> cps = uni::codepoints(line);
  std::u32string ctx(static_cast<std::size_t>(order_ - 1), kBos);
  for (char32_t cp : cps) {
    vocab_.insert(cp);
    counts_[ctx][cp] += 1;
    totals_[ctx] += 1;
    if (order_ > 1) {
      ctx.erase(ctx.begin());
      ctx.push_back(cp);
    }
  }
}

double NgramLm::vocab_size() const {
  return static_cast<double>(vocab_.size()) + 1.0;  // one unknown slot
}

double NgramLm::perplexity(std::string_view text) const {
  std::vector<char32_t> cps = uni::codepoints(text);
  if (cps.empty())
    throw std::invalid_argument("perplexity of empty text is undefined");
  double v = vocab_size();
  double nll = 0.0;
  std::u32string ctx(static_cast<std::size_t>(order_ - 1), kBos);
  for (char32_t cp : cps) {
    double count = 0.0, total = 0.0;
    auto it = counts_.find(ctx);
    if (it != counts_.end()) {
      auto jt = it->second.find(cp);
      if (jt != it->second.end()) count = static_cast<double>(jt->second);
      total = static_cast<double>(totals_.at(ctx));
    }
    nll -= std::log((count + 1.0) / (total + v));
    if (order_ > 1) {
      ctx.erase(ctx.begin());
      ctx.push_back(cp);
    }
  }
  return std::exp(nll / static_cast<double>(cps.size()));
}

NgramLm train_ngram_lm(std::span<const std::string> lines, int order) {
  if (lines.empty())
    throw std::invalid_argument("cannot train n-gram model on no lines");
  NgramLm lm(order);
  for (const std::string& line : lines) lm.add_line(line);
  return lm;
}

Blocklist Blocklist::load(const std::filesystem::path& file) {
  std::ifstream f(file);
  if (!f) throw std::runtime_error("cannot read blocklist " + file.string());
  Blocklist bl;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) bl.terms.push_back(line);
  }
  return bl;
}

bool Blocklist::hits(std::string_view text) const {
  for (const std::string& t : terms)
    if (text.find(t) != std::string_view::npos) return true;
  return false;
}

std::string clean_content(std::string_view raw) {
  // markup removal on bytes ('<', '>' are ASCII and cannot occur inside
  // a multi-byte UTF-8 sequence)
  std::string stripped;
  stripped.reserve(raw.size());
  std::size_t i = 0;
  while (i < raw.size()) {
    if (raw[i] == '<') {
      std::size_t close = raw.find('>', i);
      i = close == std::string_view::npos ? raw.size() : close + 1;
      continue;
    }
    stripped.push_back(raw[i]);
    ++i;
  }

  std::vector<char32_t> cps = uni::codepoints(stripped);
  cps = collapse_punct(cps);
  std::vector<char32_t> kept;
  kept.reserve(cps.size());
  for (char32_t cp : cps)
    if (whitelisted(cp)) kept.push_back(cp);
  // dropped characters may have separated identical punctuation marks,
  // so collapse once more to stay idempotent
  kept = collapse_punct(kept);

  std::size_t b = 0, e = kept.size();
  while (b < e && uni::is_space(kept[b])) ++b;
  while (e > b && uni::is_space(kept[e - 1])) --e;
  return uni::to_utf8(std::vector<char32_t>(kept.begin() + b, kept.begin() + e));
}

Reject filter_image(const ImageMeta& meta,
                    const std::filesystem::path& image_root) {
  if (meta.width <= 0 || meta.height <= 0 ||
      meta.width * meta.height < kMinImageArea)
    return Reject::image_too_small;
  img::Image im;
  try {
    im = img::load_image(image_root / meta.path);
  } catch (const std::exception&) {
    return Reject::image_io;
  }
  if (im.height < 2 || im.width < 2) return Reject::image_degenerate;

  // stand-in content screen: a frame that is mostly one flat colour
  std::map<std::array<int, 3>, std::size_t> border;
  std::size_t n_border = 0;
  auto tally = [&](std::size_t y, std::size_t x) {
    std::array<int, 3> px;
    for (std::size_t c = 0; c < 3; ++c)
      px[c] = static_cast<int>(std::lround(im.at(y, x, c) * 255.0));
    border[px] += 1;
    ++n_border;
  };
  for (std::size_t x = 0; x < im.width; ++x) {
    tally(0, x);
    tally(im.height - 1, x);
  }
  for (std::size_t y = 1; y + 1 < im.height; ++y) {
    tally(y, 0);
    tally(y, im.width - 1);
  }
  std::size_t modal = 0;
  for (auto& [px, n] : border) modal = std::max(modal, n);
  if (static_cast<double>(modal) >
      kDegenerateBorderShare * static_cast<double>(n_border))
    return Reject::image_degenerate;
  return Reject::none;
}

std::vector<CleanRecord> process_document(
    const RawDocument& doc, const Blocklist& blocklist, const NgramLm* lm,
    double ppl_threshold, const std::filesystem::path& image_root) {
  auto rejected = [&](Kind kind, Reject why, std::string image_path = {}) {
    CleanRecord r;
    r.doc = doc.id;
    r.kind = kind;
    r.source = doc.source;
    r.image_path = std::move(image_path);
    r.reject = why;
    return r;
  };

  std::vector<char32_t> scratch;
  if (!uni::decode_utf8(doc.topic, scratch)) {
    return {rejected(Kind::plain_text, Reject::bad_utf8)};
  }
  scratch.clear();
  if (!uni::decode_utf8(doc.content, scratch)) {
    return {rejected(Kind::plain_text, Reject::bad_utf8)};
  }

  std::string topic = clean_content(doc.topic);
  std::string content = clean_content(doc.content);
  if (uni::length(topic) < kMinTopicChars)
    return {rejected(Kind::plain_text, Reject::topic_too_short)};
  if (uni::length(content) < kMinContentChars)
    return {rejected(Kind::plain_text, Reject::content_too_short)};
  if (blocklist.hits(topic) || blocklist.hits(content))
    return {rejected(Kind::plain_text, Reject::spam)};

  std::vector<CleanRecord> out;
  bool paired_source = takes_image_pairs(doc.source);
  if (paired_source && !doc.images.empty()) {
    // candidate blocks: cleaned fragments long enough to stand alone
    std::vector<CandidateBlock> cands;
    for (const BlockSpan& span : split_blocks(doc.content)) {
      std::string text = clean_content(
          std::string_view(doc.content).substr(span.begin, span.end - span.begin));
      if (uni::length(text) >= kMinContentChars)
        cands.push_back({span, std::move(text)});
    }
    for (const ImageMeta& meta : doc.images) {
      Reject why = filter_image(meta, image_root);
      if (why != Reject::none) {
        out.push_back(rejected(Kind::image_text_pair, why, meta.path));
        continue;
      }
      const CandidateBlock* best = nullptr;
      std::size_t best_dist = 0;
      bool best_after = false;
      for (const CandidateBlock& c : cands) {
        std::size_t dist = block_distance(c.span, meta.position);
        if (dist > kPairWindow) continue;
        bool after = c.span.begin > meta.position;
        if (best == nullptr || dist < best_dist ||
            (dist == best_dist && after && !best_after)) {
          best = &c;
          best_dist = dist;
          best_after = after;
        }
      }
      if (best == nullptr) {
        out.push_back(rejected(Kind::image_text_pair,
                               Reject::no_surrounding_text, meta.path));
        continue;
      }
      if (lm != nullptr && lm->perplexity(best->text) > ppl_threshold) {
        out.push_back(rejected(Kind::image_text_pair, Reject::high_perplexity,
                               meta.path));
        continue;
      }
      CleanRecord r;
      r.doc = doc.id;
      r.kind = Kind::image_text_pair;
      r.source = doc.source;
      r.text = best->text;
      r.image_path = meta.path;
      out.push_back(std::move(r));
    }
    return out;
  }

  // web-page style sources carry no standalone passages; without images
  // such a document contributes nothing
  if (doc.source == Source::webpage || doc.source == Source::ecommerce)
    return out;

  if (lm != nullptr && lm->perplexity(content) > ppl_threshold)
    return {rejected(Kind::plain_text, Reject::high_perplexity)};
  CleanRecord r;
  r.doc = doc.id;
  r.kind = Kind::plain_text;
  r.source = doc.source;
  r.text = content;
  out.push_back(std::move(r));
  return out;
}

double percentile_nearest_rank(std::vector<double> values, double pct) {
  if (values.empty())
    throw std::invalid_argument("percentile of empty sample is undefined");
  std::sort(values.begin(), values.end());
  double rank = std::ceil(pct / 100.0 * static_cast<double>(values.size()));
  std::size_t idx = rank < 1.0 ? 0 : static_cast<std::size_t>(rank) - 1;
  if (idx >= values.size()) idx = values.size() - 1;
  return values[idx];
}

PipelineResult run_pipeline(std::span<const RawDocument> docs,
                            const Blocklist& blocklist,
                            const std::filesystem::path& image_root) {
  std::vector<std::string> texts;
  for (const RawDocument& doc : docs)
    for (CleanRecord& r : process_document(doc, blocklist, nullptr, 0.0,
                                           image_root))
      if (r.accepted()) texts.push_back(std::move(r.text));

  PipelineResult result;
  result.ppl_threshold = std::numeric_limits<double>::infinity();
  NgramLm lm;
  bool have_lm = !texts.empty();
  if (have_lm) {
    lm = train_ngram_lm(texts);
    std::vector<double> ppls;
    ppls.reserve(texts.size());
    for (const std::string& t : texts) ppls.push_back(lm.perplexity(t));
    result.ppl_threshold = percentile_nearest_rank(std::move(ppls), 90.0);
  }

  for (const RawDocument& doc : docs) {
    std::vector<CleanRecord> recs = process_document(
        doc, blocklist, have_lm ? &lm : nullptr, result.ppl_threshold,
        image_root);
    for (CleanRecord& r : recs) result.records.push_back(std::move(r));
  }
  std::stable_sort(result.records.begin(), result.records.end(),
                   [](const CleanRecord& a, const CleanRecord& b) {
                     return a.doc < b.doc;
                   });
  return result;
}

CorpusStats compute_stats(std::span<const CleanRecord> records,
                          const std::filesystem::path& image_root) {
  CorpusStats stats;
  for (const CleanRecord& r : records) {
    if (!r.accepted()) continue;
    SourceStats& s = stats.per_source[static_cast<std::size_t>(r.source)];
    s.passages += 1;
    s.tokens += tok::segment_units(r.text).size();
    s.text_bytes += r.text.size();
    if (r.kind == Kind::image_text_pair) {
      s.images += 1;
      std::error_code ec;
      std::uintmax_t sz = std::filesystem::file_size(image_root / r.image_path, ec);
      if (!ec) s.image_bytes += static_cast<std::size_t>(sz);
    }
  }
  for (const SourceStats& s : stats.per_source) {
    stats.total.images += s.images;
    stats.total.tokens += s.tokens;
    stats.total.passages += s.passages;
    stats.total.text_bytes += s.text_bytes;
    stats.total.image_bytes += s.image_bytes;
  }
  for (SourceStats* s : [&] {
         std::vector<SourceStats*> all;
         for (SourceStats& x : stats.per_source) all.push_back(&x);
         all.push_back(&stats.total);
         return all;
       }())
    s->avg_length = s->passages == 0
                        ? 0.0
                        : static_cast<double>(s->tokens) /
                              static_cast<double>(s->passages);
  return stats;
}

RawDocument load_raw_document(const std::filesystem::path& file,
                              std::string id) {
  std::string bytes = read_file_bytes(file);
  RawDocument doc;
  doc.id = std::move(id);

  std::size_t pos = 0;
  bool have_source = false, have_content = false;
  while (pos <= bytes.size()) {
    std::size_t eol = bytes.find('\n', pos);
    std::string line = eol == std::string::npos
                           ? bytes.substr(pos)
                           : bytes.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t next = eol == std::string::npos ? bytes.size() + 1 : eol + 1;
    if (line == "content:") {
      doc.content = next > bytes.size() ? std::string() : bytes.substr(next);
      have_content = true;
      break;
    }
    std::size_t colon = line.find(':');
    if (colon == std::string::npos)
      throw std::runtime_error(file.string() + ": malformed header line \"" +
                               line + "\"");
    std::string key = line.substr(0, colon);
    std::string value = line.substr(colon + 1);
    if (!value.empty() && value.front() == ' ') value.erase(value.begin());
    if (key == "source") {
      doc.source = source_from_name(value);
      have_source = true;
    } else if (key == "topic") {
      doc.topic = value;
    } else if (key == "image") {
      ImageMeta meta;
      std::vector<std::string> parts;
      std::size_t start = 0;
      while (true) {
        std::size_t tab = value.find('\t', start);
        parts.push_back(value.substr(start, tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
      }
      if (parts.size() != 4)
        throw std::runtime_error(file.string() +
                                 ": image line needs path, width, height, position");
      meta.path = parts[0];
      meta.width = std::stol(parts[1]);
      meta.height = std::stol(parts[2]);
      meta.position = static_cast<std::size_t>(std::stoull(parts[3]));
      doc.images.push_back(std::move(meta));
    } else {
      throw std::runtime_error(file.string() + ": unknown header key \"" +
                               key + "\"");
    }
    pos = next;
  }
  if (!have_source)
    throw std::runtime_error(file.string() + ": missing source header");
  if (!have_content)
    throw std::runtime_error(file.string() + ": missing content section");
  return doc;
}

std::vector<RawDocument> load_raw_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".txt")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<RawDocument> docs;
  docs.reserve(files.size());
  for (const auto& f : files)
    docs.push_back(load_raw_document(f, f.stem().string()));
  return docs;
}

nlohmann::ordered_json record_json(const CleanRecord& r) {
  nlohmann::ordered_json j;
  j["doc"] = r.doc;
  j["kind"] = kind_name(r.kind);
  j["source"] = source_name(r.source);
  if (!r.text.empty()) j["text"] = r.text;
  if (!r.image_path.empty()) j["image_path"] = r.image_path;
  if (r.reject != Reject::none) j["reject_reason"] = reject_name(r.reject);
  return j;
}

void write_jsonl(std::span<const CleanRecord> records,
                 const std::filesystem::path& out) {
  std::ofstream f(out, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + out.string());
  for (const CleanRecord& r : records) f << record_json(r).dump() << "\n";
}

nlohmann::ordered_json stats_json(const CorpusStats& stats) {
  auto one = [](const SourceStats& s) {
    nlohmann::ordered_json j;
    j["images"] = s.images;
    j["tokens"] = s.tokens;
    j["passages"] = s.passages;
    j["avg_length"] = s.avg_length;
    j["text_bytes"] = s.text_bytes;
    j["image_bytes"] = s.image_bytes;
    return j;
  };
  nlohmann::ordered_json j;
  for (std::size_t i = 0; i < kNumSources; ++i)
    j[source_name(static_cast<Source>(i))] = one(stats.per_source[i]);
  j["total"] = one(stats.total);
  return j;
}

}  // namespace m6::corpus
