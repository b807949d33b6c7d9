#include "sfusion/fusion.h"

#include <algorithm>
#include <cmath>
#include <thread>

#include "sfusion/error.h"
#include "sfusion/eval.h"
#include "sfusion/mwer.h"

namespace sfusion {

namespace {

struct Candidate {
  std::size_t parent;
  TokenId token;
  double am;
  double lm;
  std::size_t coverage;
  double score;
};

// Per-parent model outputs shared by all of its expansions.
struct Expansion {
  AmStepOutput am;
  std::optional<LmStepOutput> lm;
  std::vector<double> mass;
  std::size_t coverage = 0;
};

// Lexicographic comparison of parent.tokens + token.
bool sequence_less(const std::vector<TokenId>& a, TokenId a_last,
                   const std::vector<TokenId>& b, TokenId b_last) {
  std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i] != b[i]) return a[i] < b[i];
  }
  if (a.size() != b.size()) {
    // Shorter prefix: compare its appended token with the other's next one.
    if (a.size() < b.size()) return a_last != b[n] ? a_last < b[n] : true;
    return b_last != a[n] ? a[n] < b_last : false;
  }
  return a_last < b_last;
}

bool hyp_before(const Hypothesis& a, double sa, const Hypothesis& b, double sb) {
  if (sa != sb) return sa > sb;
  return a.tokens < b.tokens;
}

}  // namespace

void FusionConfig::validate() const {
  if (beam_size < 1) throw ContractError("fusion: beam_size must be >= 1");
  if (!(tau > 0.0 && tau <= 1.0)) throw ContractError("fusion: tau must lie in (0, 1]");
  if (!(max_eos_logprob_delta >= 0.0)) {
    throw ContractError("fusion: max_eos_logprob_delta must be >= 0");
  }
  if (!std::isfinite(alpha) || !std::isfinite(beta)) {
    throw ContractError("fusion: alpha and beta must be finite");
  }
}

std::size_t FusionConfig::resolved_max_steps(std::size_t frames) const {
  return max_steps ? max_steps : 2 * frames + 10;
}

double fused_score(double am_logprob, double lm_logprob, std::size_t coverage,
                   const FusionConfig& cfg) {
  return am_logprob + cfg.alpha * lm_logprob + cfg.beta * static_cast<double>(coverage);
}

double fused_score(const Hypothesis& h, const FusionConfig& cfg) {
  return fused_score(h.am_logprob, h.lm_logprob, h.coverage, cfg);
}

std::size_t coverage(std::span<const double> masses, double tau) {
  return static_cast<std::size_t>(
      std::count_if(masses.begin(), masses.end(), [tau](double m) { return m > tau; }));
}

bool eos_admissible(double candidate_score, double best_current_score, double delta) {
  return candidate_score >= best_current_score - delta;
}

BeamResult beam_search(const AttentionAm& am, const LstmLm* lm, const CharVocab& vocab,
                       const Features& features, const FusionConfig& cfg,
                       std::optional<std::string_view> reference) {
  cfg.validate();
  if (features.size() == 0 || features.rows() == 0) {
    throw ContractError("beam_search: empty feature sequence");
  }
  if (am.config().vocab_size != vocab.size() ||
      (lm && lm->config().vocab_size != vocab.size())) {
    throw ContractError("beam_search: model vocabulary size does not match the vocabulary");
  }
  const EncoderOutput enc = am.encode(features);
  const std::size_t frames = enc.frames();
  const std::size_t max_steps = cfg.resolved_max_steps(frames);
  const std::size_t n_vocab = vocab.size();
  const std::size_t n_best = cfg.n_best ? cfg.n_best : cfg.beam_size;

  std::vector<Hypothesis> active(1);
  active[0].attention_mass.assign(frames, 0.0);
  active[0].am_state = am.init_state();
  if (lm) active[0].lm_state = lm->init();

  std::vector<Hypothesis> completed;
  std::vector<double> completed_scores;
  BeamResult result;

  std::vector<Expansion> expansions;
  std::vector<Candidate> candidates;
  std::size_t step = 0;
  while (step < max_steps && !active.empty()) {
    ++step;
    expansions.clear();
    expansions.reserve(active.size());
    candidates.clear();
    double best = -std::numeric_limits<double>::infinity();
    for (const double s : completed_scores) best = std::max(best, s);

    for (std::size_t p = 0; p < active.size(); ++p) {
      const Hypothesis& h = active[p];
      TokenId prev = h.tokens.empty() ? CharVocab::kSos : h.tokens.back();
      Expansion ex{am.decode_step(h.am_state, prev, enc), std::nullopt, h.attention_mass, 0};
      if (lm) ex.lm = lm->step(h.lm_state, prev);
      for (std::size_t j = 0; j < frames; ++j) ex.mass[j] += ex.am.attention[j];
      ex.coverage = coverage(ex.mass, cfg.tau);
      for (std::size_t v = 0; v < n_vocab; ++v) {
        auto tok = static_cast<TokenId>(v);
        if (tok == CharVocab::kSos) continue;
        Candidate c{p, tok, h.am_logprob + ex.am.logprobs[v],
                    h.lm_logprob + (lm ? ex.lm->logprobs[v] : 0.0), ex.coverage, 0.0};
        c.score = fused_score(c.am, c.lm, c.coverage, cfg);
        best = std::max(best, c.score);
        candidates.push_back(c);
      }
      expansions.push_back(std::move(ex));
    }

    auto materialize = [&](const Candidate& c) {
      const Hypothesis& parent = active[c.parent];
      Expansion& ex = expansions[c.parent];
      Hypothesis h;
      h.tokens = parent.tokens;
      h.tokens.push_back(c.token);
      h.am_logprob = c.am;
      h.lm_logprob = c.lm;
      h.coverage = c.coverage;
      h.attention_mass = ex.mass;
      h.am_state = ex.am.next;
      if (lm) h.lm_state = ex.lm->next;
      return h;
    };

    std::vector<const Candidate*> survivors;
    for (const Candidate& c : candidates) {
      if (c.token == CharVocab::kEos) {
        if (eos_admissible(c.score, best, cfg.max_eos_logprob_delta)) {
          Hypothesis h = materialize(c);
          h.complete = true;
          h.text = vocab.decode(h.tokens);
          completed.push_back(std::move(h));
          completed_scores.push_back(c.score);
        } else {
          ++result.diagnostics.eos_rejections;
        }
      } else {
        survivors.push_back(&c);
      }
    }

    auto better = [&](const Candidate* a, const Candidate* b) {
      if (a->score != b->score) return a->score > b->score;
      return sequence_less(active[a->parent].tokens, a->token, active[b->parent].tokens,
                           b->token);
    };
    std::size_t keep = std::min(cfg.beam_size, survivors.size());
    std::partial_sort(survivors.begin(), survivors.begin() + static_cast<std::ptrdiff_t>(keep),
                      survivors.end(), better);
    std::vector<Hypothesis> next;
    next.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) next.push_back(materialize(*survivors[i]));
    active = std::move(next);

    if (completed.size() >= cfg.beam_size) break;
  }
  result.diagnostics.steps = step;

  if (completed.empty()) {
    if (active.empty()) throw ContractError("beam_search: no hypotheses survived");
    // Active hypotheses are already ordered best first.
    Hypothesis h = std::move(active.front());
    h.complete = true;
    h.text = vocab.decode(h.tokens);
    completed_scores.push_back(fused_score(h, cfg));
    completed.push_back(std::move(h));
    result.diagnostics.forced_completion = true;
  }

  std::vector<std::size_t> order(completed.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return hyp_before(completed[a], completed_scores[a], completed[b], completed_scores[b]);
  });
  order.resize(std::min(order.size(), n_best));
  for (std::size_t i : order) {
    result.scores.push_back(completed_scores[i]);
    result.hyps.push_back(std::move(completed[i]));
  }
  result.posteriors = renormalize(result.scores);
  if (reference) {
    result.diagnostics.truncated =
        is_truncated(split_words(result.best().text).size(), split_words(*reference).size());
  }
  return result;
}

void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(workers);
  for (unsigned w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<BeamResult> decode_batch(const AttentionAm& am, const LstmLm* lm,
                                     const CharVocab& vocab,
                                     std::span<const Utterance> utterances,
                                     const FusionConfig& cfg, unsigned workers) {
  std::vector<BeamResult> out(utterances.size());
  parallel_for(utterances.size(), workers, [&](std::size_t i) {
    out[i] = beam_search(am, lm, vocab, utterances[i].features, cfg,
                         std::string_view(utterances[i].transcript));
  });
  return out;
}

}  // namespace sfusion
