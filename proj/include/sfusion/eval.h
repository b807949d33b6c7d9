#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sfusion/fusion.h"
#include "sfusion/models.h"
#include "sfusion/text.h"

namespace sfusion {

struct EditCounts {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t total = 0;
};

// Word-level Levenshtein distance with unit costs. The breakdown is one
// minimal alignment, preferring substitutions, then deletions.
EditCounts edit_distance_words(std::span<const std::string> hyp, std::span<const std::string> ref);
EditCounts edit_distance_words(std::string_view hyp, std::string_view ref);

// A prediction is truncated when it has at most half as many words as the
// reference: 2 * |hyp| <= |ref|.
bool is_truncated(std::size_t hyp_words, std::size_t ref_words);

struct HypRef {
  std::string id;
  std::string hyp;
  std::string ref;
};

struct TruncationPartition {
  std::vector<std::size_t> truncated;
  std::vector<std::size_t> rest;
  std::vector<std::size_t> excluded;  // empty references
};

TruncationPartition truncation_partition(std::span<const HypRef> pairs);

struct UtteranceRecord {
  std::string id;
  std::string hyp;
  std::string ref;
  std::size_t edits = 0;
  std::size_t ref_words = 0;
  bool truncated = false;
};

struct EvalReport {
  double wer = 0.0;
  double trunc_wer = 0.0;   // edits / ref words over the truncated partition
  double trunc_frac = 0.0;  // truncated utterances / scored utterances
  std::size_t total_edits = 0;
  std::size_t total_ref_words = 0;
  std::size_t trunc_edits = 0;
  std::size_t trunc_ref_words = 0;
  std::size_t excluded = 0;
  std::vector<UtteranceRecord> records;

  // Truncated-partition edits over all reference words.
  double trunc_contribution() const;
  void write_json(std::ostream& os) const;
};

// Corpus-level scoring: WER = total edits / total reference words.
EvalReport score_pairs(std::span<const HypRef> pairs);

// Decodes every utterance and scores the best hypotheses.
EvalReport evaluate(const AttentionAm& am, const LstmLm* lm, const CharVocab& vocab,
                    std::span<const Utterance> utterances, const FusionConfig& cfg,
                    unsigned workers = 1);

// Words with am_count <= am_max and lm_count >= lm_min, sorted.
std::vector<std::string> build_lm_integration_wordlist(const CorpusStats& am_stats,
                                                       const CorpusStats& lm_stats,
                                                       std::uint64_t am_max = 5,
                                                       std::uint64_t lm_min = 150);

struct SweepCell {
  std::size_t beam_size = 1;
  double delta = 0.0;
};

struct SweepRow {
  std::size_t beam_size = 1;
  double delta = 0.0;
  double wer = 0.0;
  double trunc_wer = 0.0;
  double trunc_frac = 0.0;
};

// One decode pass per cell with alpha/beta/tau/max_steps taken from base.
std::vector<SweepRow> sweep(const AttentionAm& am, const LstmLm* lm, const CharVocab& vocab,
                            std::span<const Utterance> utterances,
                            std::span<const SweepCell> grid, const FusionConfig& base,
                            unsigned workers = 1);
// Header beam,delta,wer,trunc_wer,trunc_frac; values printed round-trip exact.
void write_sweep_csv(std::ostream& os, std::span<const SweepRow> rows);

// Max minus min WER across the rows.
double wer_range(std::span<const SweepRow> rows);

}  // namespace sfusion
