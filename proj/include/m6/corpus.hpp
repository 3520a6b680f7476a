#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace m6::corpus {

enum class Source {
  encyclopedia,
  community_qa,
  forum,
  common_crawl,
  webpage,
  ecommerce,
};
inline constexpr std::size_t kNumSources = 6;

const char* source_name(Source s);
Source source_from_name(std::string_view name);  // throws on unknown names

struct ImageMeta {
  std::string path;   // relative to the image root
  long width = 0;
  long height = 0;
  std::size_t position = 0;  // byte offset into the raw content
};

struct RawDocument {
  std::string id;
  Source source = Source::common_crawl;
  std::string topic;
  std::string content;  // may contain markup; bytes, not validated yet
  std::vector<ImageMeta> images;
};

enum class Reject {
  none,
  bad_utf8,
  topic_too_short,
  content_too_short,
  spam,
  high_perplexity,
  image_too_small,
  image_degenerate,
  image_io,
  no_surrounding_text,
};
const char* reject_name(Reject r);

enum class Kind { plain_text, image_text_pair };
const char* kind_name(Kind k);

struct CleanRecord {
  std::string doc;  // stable document id; output is sorted by it
  Kind kind = Kind::plain_text;
  Source source = Source::common_crawl;
  std::string text;
  std::string image_path;
  Reject reject = Reject::none;
  bool accepted() const { return reject == Reject::none; }
};

/// Character-level n-gram model with add-one smoothing, used to score
/// passages; unseen events get probability 1/(context_total + V) with
/// V = distinct training characters + 1 unknown slot.
class NgramLm {
 public:
  explicit NgramLm(int order = 3);
  void add_line(std::string_view line);
  bool trained() const { return !vocab_.empty(); }
  double vocab_size() const;
  /// exp of the mean negative log probability; throws on empty text.
  double perplexity(std::string_view text) const;

 private:
  int order_;
  std::map<std::u32string, std::map<char32_t, std::size_t>> counts_;
  std::map<std::u32string, std::size_t> totals_;
  std::set<char32_t> vocab_;
};

NgramLm train_ngram_lm(std::span<const std::string> lines, int order = 3);

struct Blocklist {
  std::vector<std::string> terms;
  static Blocklist load(const std::filesystem::path& file);
  bool hits(std::string_view text) const;
};

/// Text normalisation applied to every kept passage: markup tags
/// removed, runs of one repeated punctuation mark collapsed, characters
/// outside the Chinese/English/digit/punctuation whitelist dropped
/// ('<' and '>' are dropped too so the result is a fixed point), and
/// surrounding whitespace trimmed. Idempotent.
std::string clean_content(std::string_view raw);

/// Image gate: metadata area at least 5000 pixels, file loadable, and
/// not degenerate (more than 60% of border pixels identical).
Reject filter_image(const ImageMeta& meta,
                    const std::filesystem::path& image_root);

/// Runs one document through the filter chain and emits accepted
/// records and per-record rejections. A null lm skips the perplexity
/// gate (used by the first pass that collects texts to train it on).
std::vector<CleanRecord> process_document(
    const RawDocument& doc, const Blocklist& blocklist, const NgramLm* lm,
    double ppl_threshold, const std::filesystem::path& image_root);

struct PipelineResult {
  std::vector<CleanRecord> records;  // sorted by document id
  double ppl_threshold = 0.0;
};

/// Two passes: collect candidate texts with the perplexity gate off,
/// train the n-gram model on them and fix the threshold at their 90th
/// percentile, then reprocess every document with the gate on.
PipelineResult run_pipeline(std::span<const RawDocument> docs,
                            const Blocklist& blocklist,
                            const std::filesystem::path& image_root);

/// Nearest-rank percentile: sorted ascending, element at index
/// ceil(p/100 * n) - 1. Throws on empty input.
double percentile_nearest_rank(std::vector<double> values, double pct);

struct SourceStats {
  std::size_t images = 0;
  std::size_t tokens = 0;
  std::size_t passages = 0;
  double avg_length = 0.0;  // tokens / passages
  std::size_t text_bytes = 0;
  std::size_t image_bytes = 0;
};

struct CorpusStats {
  std::array<SourceStats, kNumSources> per_source;
  SourceStats total;
};

CorpusStats compute_stats(std::span<const CleanRecord> records,
                          const std::filesystem::path& image_root);

/// Document file format: header lines "source: NAME", "topic: TEXT",
/// zero or more "image: PATH<TAB>WIDTH<TAB>HEIGHT<TAB>POSITION", then a
/// line "content:"; everything after it is the raw content bytes.
RawDocument load_raw_document(const std::filesystem::path& file,
                              std::string id);
/// Loads every *.txt in the directory, sorted by filename; the id is
/// the filename stem.
std::vector<RawDocument> load_raw_dir(const std::filesystem::path& dir);

nlohmann::ordered_json record_json(const CleanRecord& r);
void write_jsonl(std::span<const CleanRecord> records,
                 const std::filesystem::path& out);
nlohmann::ordered_json stats_json(const CorpusStats& stats);

}  // namespace m6::corpus
