#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sfusion/fusion.h"
#include "sfusion/models.h"

namespace sfusion {

// exp(s_i) / sum_j exp(s_j), max-shifted. Entries at -inf get 0. Throws
// ContractError when empty or when every score is -inf.
std::vector<double> renormalize(std::span<const double> scores);

struct BeamLoss {
  std::vector<double> posterior;   // renormalized P over the beam
  std::vector<double> w_hat;       // error statistic per hypothesis
  double loss = 0.0;               // sum_i P_i * W_i
  std::vector<double> score_grad;  // dL/ds_i = P_i * (W_i - sum_j P_j W_j)
};

// Expected error over the beam. Relative mode subtracts the beam-mean edit
// count from each hypothesis's edits.
BeamLoss mwer_loss(std::span<const double> scores, std::span<const double> edits,
                   bool relative = true);
// Scores are the beam's fused scores; edits are word edits to the reference.
BeamLoss mwer_loss(const BeamResult& beam, std::string_view reference, bool relative = true);

enum class MwerMode { kAmOnly, kFused };

struct MwerConfig {
  MwerMode mode = MwerMode::kFused;
  // Beam search run inside training; the adaptation target.
  FusionConfig fusion;
  bool relative = true;
  double learning_rate = 0.01;
  std::size_t steps = 100;
  std::uint64_t seed = 1;
  double clip_norm = 5.0;

  // beam_size >= 2; kAmOnly ignores alpha/beta.
  void validate() const;
};

struct MwerStep {
  std::size_t step = 0;
  double loss = 0.0;
  double beam_wer = 0.0;  // WER of the top hypothesis for this utterance
  std::size_t distinct = 0;
};

struct MwerLog {
  std::vector<MwerStep> steps;
  std::size_t degenerate_steps = 0;  // fewer than 2 distinct hypotheses
  bool degenerate_warning = false;   // more than 90% of steps degenerate
};

// SGD fine-tuning of the AM on the MWER loss. One utterance per step in a
// seeded shuffled order. In fused mode the training beam search uses the
// LM, and the LM and coverage terms of each score enter the loss as
// stop-gradient constants, so only AM parameters move.
MwerLog mwer_finetune(AttentionAm& am, const LstmLm* lm, const CharVocab& vocab,
                      std::span<const Utterance> utterances, const MwerConfig& config);

// Loss of one beam as a graph over the AM parameters. Returns L and leaves
// dL/dtheta in the AM grad slots.
double mwer_backward(AttentionAm& am, const Features& features,
                     const BeamResult& beam, std::string_view reference,
                     const FusionConfig& scoring, bool relative);

}  // namespace sfusion
