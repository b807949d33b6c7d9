#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sfusion/models.h"
#include "sfusion/text.h"

namespace sfusion {

struct FusionConfig {
  double alpha = 0.0;  // LM weight
  double beta = 0.0;   // coverage weight
  double tau = 0.5;    // attention-mass threshold for a frame to count as covered
  std::size_t beam_size = 4;
  double max_eos_logprob_delta = std::numeric_limits<double>::infinity();
  std::size_t max_steps = 0;  // 0 = 2 * frames + 10
  std::size_t n_best = 0;     // 0 = beam_size

  // Throws ContractError on beam_size < 1, tau outside (0, 1], negative delta.
  void validate() const;
  std::size_t resolved_max_steps(std::size_t frames) const;
};

struct Hypothesis {
  std::vector<TokenId> tokens;  // excludes SOS; ends with EOS once completed normally
  std::string text;
  double am_logprob = 0.0;
  double lm_logprob = 0.0;
  std::size_t coverage = 0;
  std::vector<double> attention_mass;  // accumulated attention per frame
  AmDecoderState am_state;
  LmState lm_state;
  bool complete = false;
};

// log P_AM + alpha * log P_LM + beta * C.
double fused_score(double am_logprob, double lm_logprob, std::size_t coverage,
                   const FusionConfig& cfg);
double fused_score(const Hypothesis& h, const FusionConfig& cfg);

// Number of frames whose accumulated attention mass exceeds tau.
std::size_t coverage(std::span<const double> masses, double tau);

// An EOS candidate completes only when it trails the best score by at most
// delta.
bool eos_admissible(double candidate_score, double best_current_score, double delta);

struct BeamDiagnostics {
  std::size_t steps = 0;
  std::size_t eos_rejections = 0;
  bool forced_completion = false;
  // Set when a reference was supplied: best hypothesis has at most half as
  // many words as the reference.
  std::optional<bool> truncated;
};

struct BeamResult {
  std::vector<Hypothesis> hyps;   // sorted by fused score, best first
  std::vector<double> scores;     // fused score per hypothesis
  std::vector<double> posteriors; // renormalized over the returned hypotheses
  BeamDiagnostics diagnostics;

  const Hypothesis& best() const { return hyps.front(); }
};

// Fused beam search. lm may be null (pure AM decoding). Every active
// hypothesis expands over all non-SOS tokens per step. EOS expansions complete
// only when eos_admissible against the best fused score among this step's
// candidates and the completed set; rejected ones are discarded. The top
// beam_size non-EOS candidates survive; ties go to the lexicographically
// smaller token sequence. Stops once beam_size hypotheses completed or after
// max_steps; if none completed, the best active one is force-completed.
BeamResult beam_search(const AttentionAm& am, const LstmLm* lm, const CharVocab& vocab,
                       const Features& features, const FusionConfig& cfg,
                       std::optional<std::string_view> reference = std::nullopt);

// Decodes utterances on `workers` threads. Output order and content do not
// depend on the worker count.
std::vector<BeamResult> decode_batch(const AttentionAm& am, const LstmLm* lm,
                                     const CharVocab& vocab,
                                     std::span<const Utterance> utterances,
                                     const FusionConfig& cfg, unsigned workers = 1);

// Runs fn(i) for i in [0, n) over a fixed static partition of workers.
void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn);

}  // namespace sfusion
