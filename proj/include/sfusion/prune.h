#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "sfusion/text.h"

namespace sfusion {

using Corpus = std::vector<std::string>;
using WordSet = std::unordered_set<std::string>;

enum class LogBase { kNatural, kTwo, kTen };
LogBase parse_log_base(std::string_view name);  // ln | log2 | log10
std::string_view log_base_name(LogBase base);

// Copies kept for a line seen n times: max(1, floor(log_base(n))).
std::uint64_t dedup_keep_count(std::uint64_t n, LogBase base);

// One word per line; blank lines skipped. Missing file -> IoError.
WordSet read_word_set(const std::string& path);

struct FilterResult {
  Corpus lines;
  std::size_t dropped = 0;
};

// Step 1: drops every sentence with a word outside the vocabulary.
FilterResult vocab_filter(std::span<const std::string> corpus, const WordSet& vocabulary,
                          unsigned workers = 1);
// Step 2: a sentence seen n times keeps its first dedup_keep_count(n)
// occurrences in stream order.
FilterResult logn_dedup(std::span<const std::string> corpus, LogBase base = LogBase::kNatural,
                        unsigned workers = 1);
// Step 2*: keeps sentences with at least one word whose AM count is below
// the threshold (absent words count 0).
FilterResult rare_word_filter(std::span<const std::string> corpus, const CorpusStats& am_stats,
                              std::uint64_t threshold, unsigned workers = 1);
// Step 3: min(target, size) sentences by seeded uniform sampling without
// replacement, emitted in original relative order.
FilterResult sample_to_target(std::span<const std::string> corpus, std::size_t target,
                              std::uint64_t seed);

enum class PruneStage { kAll, kVocab, kDedup, kRare, kSample };
PruneStage parse_prune_stage(std::string_view name);  // all | 1 | 2 | 2* | 3

struct PruneConfig {
  std::optional<WordSet> vocabulary;     // step 1 skipped when absent
  bool rare_filter = false;
  std::uint64_t rare_threshold = 5;
  std::optional<CorpusStats> am_stats;   // required when rare_filter
  std::optional<std::size_t> target;     // step 3 skipped when absent
  bool skip_sampling_after_rare = false; // rare-filter branch keeps everything it selects
  std::uint64_t seed = 1;
  LogBase log_base = LogBase::kNatural;
  PruneStage stage = PruneStage::kAll;
  unsigned workers = 1;
};

struct StageRecord {
  std::string name;
  std::size_t input = 0;
  std::size_t output = 0;
  double seconds = 0.0;
};

struct PruneReport {
  std::vector<StageRecord> stages;
  std::uint64_t seed = 0;
  std::string log_base;

  // Counts and seed only; timings are excluded when include_timings is false.
  void write_json(std::ostream& os, bool include_timings = true) const;
};

struct PruneOutput {
  Corpus lines;
  PruneReport report;
};

// Stage order 1 -> 2 -> 2* -> 3. Stage errors are rethrown prefixed with the
// stage name.
PruneOutput prune_pipeline(std::span<const std::string> corpus, const PruneConfig& config);

}  // namespace sfusion
