#include "sfusion/training.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sfusion/error.h"

namespace sfusion {

Adam::Adam(std::vector<ad::Tensor*> params, double learning_rate, double beta1, double beta2,
           double epsilon)
    : params_(std::move(params)), lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(epsilon) {
  for (auto* p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    ad::Tensor& p = *params_[k];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1_ * m[i] + (1 - b1_) * g[i];
      v[i] = b2_ * v[i] + (1 - b2_) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
    p.clear_grad();
  }
}

void sgd_step(std::span<ad::Tensor* const> params, double learning_rate) {
  for (auto* p : params) {
    if (!p->has_grad()) continue;
    auto g = p->grad();
    for (std::size_t i = 0; i < p->size(); ++i) (*p)[i] -= learning_rate * g[i];
    p->clear_grad();
  }
}

double clip_gradients(std::span<ad::Tensor* const> params, double max_norm) {
  double sq = 0.0;
  for (auto* p : params) {
    for (double g : p->grad()) sq += g * g;
  }
  double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("training: non-finite gradient norm");
  if (max_norm > 0 && norm > max_norm) {
    double s = max_norm / norm;
    for (auto* p : params) {
      if (!p->has_grad()) continue;
      for (double& g : p->mutable_grad()) g *= s;
    }
  }
  return norm;
}

namespace {

template <typename Model, typename LossFn>
TrainLog train_loop(Model& model, std::size_t n_items, const TrainConfig& config,
                    LossFn&& item_loss, const std::function<double()>& full_loss) {
  if (n_items == 0) throw ContractError("training: no data");
  TrainLog log;
  log.initial_loss = full_loss();
  auto params = model.parameters();
  for (auto* p : params) p->clear_grad();
  Adam opt(params, config.learning_rate);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(n_items);
  std::size_t updates = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_nats = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t idx : order) {
      if (config.max_updates && updates >= config.max_updates) break;
      ad::Graph g;
      auto [logprob, tokens] = item_loss(g, idx);
      double nats = -g.scalar(logprob);
      if (!std::isfinite(nats)) {
        throw NumericError("training diverged: non-finite loss at update " +
                           std::to_string(updates));
      }
      // Per-token normalisation through a constant scale.
      ad::Var scale = g.constant(ad::Tensor::scalar(-1.0 / static_cast<double>(tokens)));
      g.backward(g.mul(logprob, scale));
      clip_gradients(params, config.clip_norm);
      if (config.learning_rate == 0.0) {
        for (auto* p : params) p->clear_grad();
      } else {
        opt.step();
      }
      ++updates;
      log.update_loss.push_back(nats / static_cast<double>(tokens));
      epoch_nats += nats;
      epoch_tokens += tokens;
    }
    if (epoch_tokens) log.epoch_loss.push_back(epoch_nats / static_cast<double>(epoch_tokens));
    if (config.max_updates && updates >= config.max_updates) break;
  }
  log.final_loss = full_loss();
  return log;
}

}  // namespace

double lm_cross_entropy(const LstmLm& lm, const CharVocab& vocab,
                        std::span<const std::string> sentences) {
  double nats = 0.0;
  std::size_t tokens = 0;
  for (const auto& s : sentences) {
    auto ids = vocab.encode(s);
    nats -= lm.sequence_logprob(ids);
    tokens += ids.size() - 1;
  }
  return tokens ? nats / static_cast<double>(tokens) : 0.0;
}

double am_cross_entropy(const AttentionAm& am, const CharVocab& vocab,
                        std::span<const Utterance> utterances) {
  double nats = 0.0;
  std::size_t tokens = 0;
  for (const auto& u : utterances) {
    auto ids = vocab.encode(u.transcript);
    nats -= am.sequence_logprob(am.encode(u.features), ids);
    tokens += ids.size() - 1;
  }
  return tokens ? nats / static_cast<double>(tokens) : 0.0;
}

TrainLog ce_pretrain_lm(LstmLm& lm, const CharVocab& vocab, std::span<const std::string> sentences,
                        const TrainConfig& config) {
  std::vector<std::vector<TokenId>> encoded;
  encoded.reserve(sentences.size());
  for (const auto& s : sentences) encoded.push_back(vocab.encode(s));
  return train_loop(
      lm, encoded.size(), config,
      [&](ad::Graph& g, std::size_t i) {
        auto b = lm.bind(g);
        return std::pair{lm.sequence_logprob(g, b, encoded[i]), encoded[i].size() - 1};
      },
      [&] { return lm_cross_entropy(lm, vocab, sentences); });
}

TrainLog ce_pretrain_am(AttentionAm& am, const CharVocab& vocab,
                        std::span<const Utterance> utterances, const TrainConfig& config) {
  std::vector<std::vector<TokenId>> encoded;
  encoded.reserve(utterances.size());
  for (const auto& u : utterances) encoded.push_back(vocab.encode(u.transcript));
  return train_loop(
      am, encoded.size(), config,
      [&](ad::Graph& g, std::size_t i) {
        auto b = am.bind(g);
        auto enc = am.encode(g, b, utterances[i].features);
        return std::pair{am.sequence_logprob(g, b, enc, encoded[i]), encoded[i].size() - 1};
      },
      [&] { return am_cross_entropy(am, vocab, utterances); });
}

}  // namespace sfusion
