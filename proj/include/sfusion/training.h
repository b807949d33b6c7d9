#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sfusion/autodiff.h"
#include "sfusion/models.h"
#include "sfusion/text.h"

namespace sfusion {

// Adam with bias correction over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<ad::Tensor*> params, double learning_rate, double beta1 = 0.9,
       double beta2 = 0.999, double epsilon = 1e-8);
  // Consumes and clears the parameters' grad slots.
  void step();

 private:
  std::vector<ad::Tensor*> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
};

// Plain SGD: p -= lr * grad. Clears the grad slots.
void sgd_step(std::span<ad::Tensor* const> params, double learning_rate);

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before scaling.
double clip_gradients(std::span<ad::Tensor* const> params, double max_norm);

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t epochs = 10;
  std::size_t max_updates = 0;  // 0 = no limit beyond epochs
  std::uint64_t seed = 1;
  double clip_norm = 5.0;
};

struct TrainLog {
  std::vector<double> update_loss;  // nats per predicted token, per update
  std::vector<double> epoch_loss;   // token-weighted mean per epoch
  double initial_loss = 0.0;        // before any update, over all data
  double final_loss = 0.0;          // after training, over all data
};

// Cross-entropy training with Adam, one sentence per update, reshuffled
// every epoch from the seed. A non-finite loss aborts with NumericError.
TrainLog ce_pretrain_lm(LstmLm& lm, const CharVocab& vocab, std::span<const std::string> sentences,
                        const TrainConfig& config);
TrainLog ce_pretrain_am(AttentionAm& am, const CharVocab& vocab,
                        std::span<const Utterance> utterances, const TrainConfig& config);

// Mean nats per predicted token over the data (EOS included).
double lm_cross_entropy(const LstmLm& lm, const CharVocab& vocab,
                        std::span<const std::string> sentences);
double am_cross_entropy(const AttentionAm& am, const CharVocab& vocab,
                        std::span<const Utterance> utterances);

}  // namespace sfusion
