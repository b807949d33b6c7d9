#include "sfusion/mwer.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "sfusion/error.h"
#include "sfusion/eval.h"
#include "sfusion/log.h"
#include "sfusion/training.h"

namespace sfusion {

std::vector<double> renormalize(std::span<const double> scores) {
  if (scores.empty()) throw ContractError("renormalize: no scores");
  double mx = -std::numeric_limits<double>::infinity();
  for (double s : scores) {
    if (std::isnan(s) || s == std::numeric_limits<double>::infinity()) {
      throw NumericError("renormalize: score is NaN or +inf");
    }
    mx = std::max(mx, s);
  }
  if (mx == -std::numeric_limits<double>::infinity()) {
    throw ContractError("renormalize: every score is -inf");
  }
  std::vector<double> out(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - mx);
    z += out[i];
  }
  for (double& p : out) p /= z;
  return out;
}

BeamLoss mwer_loss(std::span<const double> scores, std::span<const double> edits, bool relative) {
  if (scores.empty()) throw ContractError("mwer_loss: empty beam");
  if (scores.size() != edits.size()) {
    throw ContractError("mwer_loss: one edit count per hypothesis required");
  }
  BeamLoss out;
  out.posterior = renormalize(scores);
  out.w_hat.assign(edits.begin(), edits.end());
  if (relative) {
    double mean = std::accumulate(edits.begin(), edits.end(), 0.0) /
                  static_cast<double>(edits.size());
    for (double& w : out.w_hat) w -= mean;
  }
  for (std::size_t i = 0; i < scores.size(); ++i) out.loss += out.posterior[i] * out.w_hat[i];
  out.score_grad.resize(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out.score_grad[i] = out.posterior[i] * (out.w_hat[i] - out.loss);
  }
  return out;
}

BeamLoss mwer_loss(const BeamResult& beam, std::string_view reference, bool relative) {
  std::vector<double> edits;
  edits.reserve(beam.hyps.size());
  for (const auto& h : beam.hyps) {
    edits.push_back(static_cast<double>(edit_distance_words(h.text, reference).total));
  }
  return mwer_loss(beam.scores, edits, relative);
}

void MwerConfig::validate() const {
  fusion.validate();
  if (fusion.beam_size < 2) {
    throw ContractError("mwer: beam_size must be >= 2 (a one-hypothesis expectation is degenerate)");
  }
  if (learning_rate < 0) throw ContractError("mwer: learning_rate must be >= 0");
}

double mwer_backward(AttentionAm& am, const Features& features,
                     const BeamResult& beam, std::string_view reference,
                     const FusionConfig& scoring, bool relative) {
  if (beam.hyps.empty()) throw ContractError("mwer: empty beam");
  std::vector<double> edits;
  for (const auto& h : beam.hyps) {
    edits.push_back(static_cast<double>(edit_distance_words(h.text, reference).total));
  }
  double mean = std::accumulate(edits.begin(), edits.end(), 0.0) /
                static_cast<double>(edits.size());
  std::vector<double> w_hat = edits;
  if (relative) {
    for (double& w : w_hat) w -= mean;
  }

  ad::Graph g;
  auto b = am.bind(g);
  auto enc = am.encode(g, b, features);
  std::vector<ad::Var> scores;
  scores.reserve(beam.hyps.size());
  for (const auto& h : beam.hyps) {
    std::vector<TokenId> ids{CharVocab::kSos};
    ids.insert(ids.end(), h.tokens.begin(), h.tokens.end());
    ad::Var am_lp = ids.size() >= 2
                        ? am.sequence_logprob(g, b, enc, ids)
                        : g.constant(ad::Tensor::scalar(0.0));
    // LM and coverage terms are frozen.
    double frozen = scoring.alpha * h.lm_logprob +
                    scoring.beta * static_cast<double>(h.coverage);
    ad::Var rest = g.stop_gradient(g.constant(ad::Tensor::scalar(frozen)));
    scores.push_back(g.add(am_lp, rest));
  }
  ad::Var posterior = g.softmax(g.concat(scores, 1));
  ad::Var weights = g.constant(ad::Tensor::row(w_hat));
  ad::Var loss = g.sum(g.mul(posterior, weights));
  g.backward(loss);
  return g.scalar(loss);
}

MwerLog mwer_finetune(AttentionAm& am, const LstmLm* lm, const CharVocab& vocab,
                      std::span<const Utterance> utterances, const MwerConfig& config) {
  config.validate();
  if (utterances.empty()) throw ContractError("mwer: no utterances");
  if (config.mode == MwerMode::kFused && !lm) {
    throw ContractError("mwer: fused mode requires a language model");
  }
  FusionConfig search = config.fusion;
  const LstmLm* search_lm = lm;
  if (config.mode == MwerMode::kAmOnly) {
    search.alpha = 0.0;
    search.beta = 0.0;
    search_lm = nullptr;
  }
  search.n_best = 0;

  auto params = am.parameters();
  for (auto* p : params) p->clear_grad();
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(utterances.size());
  std::size_t cursor = order.size();

  MwerLog log;
  for (std::size_t step = 0; step < config.steps; ++step) {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const Utterance& u = utterances[order[cursor++]];
    BeamResult beam = beam_search(am, search_lm, vocab, u.features, search);

    std::set<std::string> distinct;
    for (const auto& h : beam.hyps) distinct.insert(h.text);
    MwerStep rec;
    rec.step = step;
    rec.distinct = distinct.size();
    EditCounts best = edit_distance_words(beam.best().text, u.transcript);
    std::size_t ref_words = split_words(u.transcript).size();
    rec.beam_wer = ref_words ? static_cast<double>(best.total) / static_cast<double>(ref_words) : 0.0;
    if (rec.distinct < 2) ++log.degenerate_steps;

    rec.loss = mwer_backward(am, u.features, beam, u.transcript, search, config.relative);
    if (!std::isfinite(rec.loss)) {
      throw NumericError("mwer: non-finite loss at step " + std::to_string(step));
    }
    clip_gradients(params, config.clip_norm);
    sgd_step(params, config.learning_rate);
    log.steps.push_back(rec);
  }
  if (!log.steps.empty() &&
      static_cast<double>(log.degenerate_steps) > 0.9 * static_cast<double>(log.steps.size())) {
    log.degenerate_warning = true;
    std::ostringstream os;
    os << "mwer: beam produced fewer than 2 distinct hypotheses on " << log.degenerate_steps
       << " of " << log.steps.size() << " steps; the expected-error estimate is degenerate";
    warn(os.str());
  }
  return log;
}

}  // namespace sfusion
