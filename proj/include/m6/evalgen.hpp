#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "m6/model.hpp"
#include "m6/rng.hpp"
#include "m6/tokenizer.hpp"

namespace m6::evalgen {

enum class Strategy { greedy, beam, topk };

struct DecodeConfig {
  Strategy strategy = Strategy::greedy;
  std::size_t beam_size = 5;
  std::size_t k = 1;
  double temperature = 1.0;
  std::size_t max_new_tokens = 32;
};

/// Next-token logits for a causal id sequence. Decoders and the poem
/// search depend only on this, so tests can swap in hand-built
/// distributions.
using StepFn = std::function<std::vector<double>(std::span<const int>)>;

/// StepFn backed by a model; the base sample supplies fixed visual and
/// masked segments (leave them empty for plain language modelling).
StepFn model_step_fn(const model::Parameters& params,
                     model::MultimodalSample base = {});

/// Generates continuations of `prefix_ids` until EOS or the token
/// budget. Returns only the newly generated ids, EOS excluded. Beam
/// search ranks by log-probability divided by generated length (the
/// EOS token counts); rng is only consumed by top-k sampling.
std::vector<int> decode(const StepFn& step, std::span<const int> prefix_ids,
                        const DecodeConfig& cfg, Rng& rng);

/// exp of the mean NLL over loss positions; throws when the sample has
/// no loss positions.
double score_ppl(const model::Parameters& params,
                 const model::MultimodalSample& sample);

/// Perplexity of a sample, injectable for tests.
using ScoreFn = std::function<double(const model::MultimodalSample&)>;
ScoreFn model_scorer(const model::Parameters& params);

struct EvalResult {
  std::string metric;
  double value = 0.0;
  std::size_t n = 0;
  std::vector<double> per_item;
};
nlohmann::ordered_json result_json(const EvalResult& r);

// ----- news-title classification -----

struct TnewsItem {
  std::string title;
  std::string keywords;
  std::string label;
  std::vector<std::string> label_pool;
};
std::vector<TnewsItem> load_tnews(const std::filesystem::path& jsonl);

std::string tnews_prompt(const TnewsItem& item, std::string_view label);

/// Four-way forced choice: the gold label against three distinct
/// negatives drawn from the pool, candidates shuffled, lowest
/// perplexity wins; repeated three times with derived seeds, metric is
/// the mean accuracy.
EvalResult eval_tnews(std::span<const TnewsItem> items, const tok::Vocab& vocab,
                      const ScoreFn& score, std::uint64_t seed);

// ----- idiom cloze -----

struct ChidItem {
  std::string passage;      // text with the idiom removed
  std::size_t blank_idx = 0;  // codepoint offset of the removed idiom
  std::vector<std::string> candidates;
  std::size_t gold = 0;
};
std::vector<ChidItem> load_chid(const std::filesystem::path& jsonl);

/// Bidirectional input carries the passage with a MASK at the blank,
/// the causal side carries the passage with a candidate substituted;
/// both sides are truncated to 256 tokens around the blank. Lowest
/// perplexity wins.
EvalResult eval_chid(std::span<const ChidItem> items, const tok::Vocab& vocab,
                     const ScoreFn& score);

// ----- span-free reading comprehension -----

struct CmrcItem {
  std::string paragraph;
  std::string question;
  std::vector<std::string> answers;
};
std::vector<CmrcItem> load_cmrc(const std::filesystem::path& jsonl);

/// Character-multiset F1; empty vs empty is 1, disjoint is 0.
double char_f1(std::string_view generated, std::string_view reference);

/// Greedy generation from "paragraph 问题:…回答:" prompts; per-item
/// score is the best F1 over the reference answers.
EvalResult eval_cmrc(std::span<const CmrcItem> items, const tok::Vocab& vocab,
                     const StepFn& step, std::size_t max_new_tokens);

// ----- prompting -----

/// Ensures the question ends in exactly one question mark, then
/// appends the answer cue; Chinese questions get the fullwidth mark
/// and cue ("？" / "回答:"), others "?" / " Answer:".
std::string qa_prompt(std::string_view question);
std::string vqa_prompt(std::string_view question);

// ----- constrained poem generation -----

struct PoemConstraint {
  std::size_t line_len = 5;  // 5 or 7 characters per line
  std::size_t min_lines = 4;
  std::size_t max_lines = 16;
  void validate() const;
};

/// All lines exactly line_len characters, line count even, within
/// [min_lines, max_lines].
bool poem_valid(std::span<const std::string> lines, const PoemConstraint& c);

/// Character-level constrained sampling: mid-line steps draw from
/// single-character vocabulary entries, EOS is admitted only on a line
/// boundary once the count is even and sufficient, and generation
/// stops hard at max_lines. Returns nullopt when the vocabulary offers
/// no usable characters or retries run out.
std::optional<std::vector<std::string>> poem_generate(
    const StepFn& step, const tok::Vocab& vocab, std::string_view title,
    const PoemConstraint& c, std::size_t top_k, double temperature, Rng& rng,
    std::size_t max_retries = 8);

/// Joins lines with alternating "，" and "。".
std::string render_poem(std::span<const std::string> lines);

}  // namespace m6::evalgen
