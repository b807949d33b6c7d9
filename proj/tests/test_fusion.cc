#include <doctest.h>

#include <cmath>
#include <numeric>

#include "oracles.h"
#include "sfusion/error.h"
#include "sfusion/fusion.h"

using namespace sfusion;

namespace {

struct ToyModels {
  CharVocab vocab{"ab"};
  AttentionAm am;
  LstmLm lm;
  Features features;

  explicit ToyModels(std::uint64_t seed, std::size_t frames = 3)
      : am(AmConfig{5, 4, 4, 6, 6, 4, 7}, seed), lm(LmConfig{5, 4, 8, 4, 1}, seed + 1000) {
    Featurizer f(vocab, {4, 7});
    std::string text = std::string("abab ").substr(0, frames);
    features = f.featurize(text, 0.5, seed);
  }
};

FusionConfig exhaustive(double alpha, double beta, std::size_t max_len) {
  FusionConfig c;
  c.alpha = alpha;
  c.beta = beta;
  c.beam_size = 100000;
  c.max_steps = max_len + 1;
  return c;
}

}  // namespace

TEST_CASE("fused_score arithmetic") {
  FusionConfig c;
  c.alpha = 0.1;
  c.beta = 0.06;
  CHECK(fused_score(-2.0, -4.0, 3, c) == doctest::Approx(-2.22).epsilon(1e-14));
  FusionConfig none;
  CHECK(fused_score(-1.7, -9.0, 4, none) == -1.7);
  Hypothesis h;
  h.am_logprob = -3.1;
  h.lm_logprob = -5.5;
  h.coverage = 4;
  FusionConfig b1 = c, b2 = c, b0 = c;
  b0.beta = 0;
  b2.beta = 2 * c.beta;
  double s0 = fused_score(h, b0);
  CHECK(fused_score(h, b2) - s0 == doctest::Approx(2 * (fused_score(h, b1) - s0)));
}

TEST_CASE("coverage counts frames above tau") {
  std::vector<double> m{0.9, 0.2, 0.8};
  CHECK(coverage(m, 0.5) == 2);
  std::vector<double> z(4, 0.0);
  CHECK(coverage(z, 0.5) == 0);
  std::vector<double> edge{0.5};
  CHECK(coverage(edge, 0.5) == 0);
}

TEST_CASE("eos_admissible") {
  CHECK_FALSE(eos_admissible(-5.00, -4.90, 0.05));
  CHECK(eos_admissible(-4.0, -4.0, 0.0));
  CHECK(eos_admissible(-4.0, -4.0, 3.0));
  CHECK(eos_admissible(-4.94, -4.90, 0.05));
}

TEST_CASE("config validation") {
  FusionConfig c;
  c.beam_size = 20;
  c.max_eos_logprob_delta = 0.05;
  CHECK_NOTHROW(c.validate());
  c.beam_size = 0;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c.beam_size = 1;
  c.tau = 0.0;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c.tau = 1.0;
  c.max_eos_logprob_delta = -1;
  CHECK_THROWS_AS(c.validate(), ContractError);
  FusionConfig d;
  CHECK(d.resolved_max_steps(7) == 24);
}

TEST_CASE("empty features are rejected") {
  ToyModels m(1);
  CHECK_THROWS_AS(beam_search(m.am, &m.lm, m.vocab, Features(ad::Tensor::matrix(0, 4)), {}),
                  ContractError);
}

TEST_CASE("full-frontier beam equals the exhaustive oracle") {
  const std::pair<double, double> weights[] = {{0.0, 0.0}, {0.1, 0.06}, {1.0, 0.5}};
  for (auto [alpha, beta] : weights) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      ToyModels m(seed);
      auto cfg = exhaustive(alpha, beta, 4);
      auto r = beam_search(m.am, &m.lm, m.vocab, m.features, cfg);
      auto best = oracle::best_sequence(m.am, &m.lm, m.vocab.size(), m.features, cfg, 4);
      CHECK(r.best().tokens == best.tokens);
      CHECK(r.scores.front() == doctest::Approx(best.fused).epsilon(1e-12));
      CHECK(r.best().coverage == best.coverage);
    }
  }
}

TEST_CASE("no LM equals fused decode with zero weights") {
  ToyModels m(3);
  FusionConfig c;
  c.beam_size = 3;
  auto a = beam_search(m.am, nullptr, m.vocab, m.features, c);
  auto b = beam_search(m.am, &m.lm, m.vocab, m.features, c);
  REQUIRE(a.hyps.size() == b.hyps.size());
  for (std::size_t i = 0; i < a.hyps.size(); ++i) {
    CHECK(a.hyps[i].tokens == b.hyps[i].tokens);
    CHECK(a.scores[i] == b.scores[i]);
  }
}

TEST_CASE("result ordering, posteriors and invariants") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ToyModels m(seed, 5);
    FusionConfig c;
    c.alpha = 0.3;
    c.beta = 0.2;
    c.beam_size = 4;
    auto r = beam_search(m.am, &m.lm, m.vocab, m.features, c, std::string_view("ab ab"));
    CHECK(std::is_sorted(r.scores.begin(), r.scores.end(), std::greater<>()));
    double z = std::accumulate(r.posteriors.begin(), r.posteriors.end(), 0.0);
    CHECK(std::abs(z - 1.0) < 1e-9);
    CHECK(r.diagnostics.truncated.has_value());
    for (std::size_t i = 0; i < r.hyps.size(); ++i) {
      const auto& h = r.hyps[i];
      CHECK(h.am_logprob <= 0.0);
      CHECK(h.lm_logprob <= 0.0);
      CHECK(h.coverage <= 5);
      CHECK(r.scores[i] == doctest::Approx(fused_score(h, c)));
      for (double mass : h.attention_mass) CHECK(mass >= 0.0);
    }
  }
}

TEST_CASE("nothing admissible forces completion") {
  ToyModels m(2);
  FusionConfig c;
  c.beam_size = 2;
  c.max_steps = 1;
  c.max_eos_logprob_delta = 0.0;
  auto r = beam_search(m.am, &m.lm, m.vocab, m.features, c);
  REQUIRE(r.hyps.size() >= 1);
  if (r.diagnostics.forced_completion) {
    CHECK(r.best().tokens.size() == 1);
    CHECK(r.best().tokens.back() != CharVocab::kEos);
  }
  // One step with beam 1 and a zero delta completes only if EOS is the top
  // candidate; either way exactly one hypothesis comes back.
  c.beam_size = 1;
  auto one = beam_search(m.am, &m.lm, m.vocab, m.features, c);
  CHECK(one.hyps.size() == 1);
}

TEST_CASE("tight delta rejects trailing EOS candidates") {
  std::size_t rejected_tight = 0, rejected_loose = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ToyModels m(seed, 5);
    FusionConfig c;
    c.beam_size = 3;
    c.max_eos_logprob_delta = 0.0;
    rejected_tight += beam_search(m.am, &m.lm, m.vocab, m.features, c).diagnostics.eos_rejections;
    c.max_eos_logprob_delta = std::numeric_limits<double>::infinity();
    rejected_loose += beam_search(m.am, &m.lm, m.vocab, m.features, c).diagnostics.eos_rejections;
  }
  CHECK(rejected_loose == 0);
  CHECK(rejected_tight > 0);
}

TEST_CASE("full frontier dominates narrower beams") {
  // Beam search is not monotone in width in general; the exhaustive frontier
  // is an upper bound on every narrower beam.
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    ToyModels m(seed);
    auto full = exhaustive(0.3, 0.1, 4);
    double top = beam_search(m.am, &m.lm, m.vocab, m.features, full).scores.front();
    for (std::size_t b : {1u, 2u, 3u, 5u, 8u}) {
      FusionConfig c = full;
      c.beam_size = b;
      CHECK(beam_search(m.am, &m.lm, m.vocab, m.features, c).scores.front() <= top + 1e-12);
    }
  }
}

TEST_CASE("best score is non-decreasing in beam width") {
  std::size_t violations = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    ToyModels m(seed, 4);
    FusionConfig c;
    c.alpha = 0.3;
    c.max_steps = 6;
    double prev = -std::numeric_limits<double>::infinity();
    for (std::size_t b = 1; b <= 6; ++b) {
      c.beam_size = b;
      double s = beam_search(m.am, &m.lm, m.vocab, m.features, c).scores.front();
      violations += s < prev - 1e-12;
      prev = std::max(prev, s);
    }
  }
  CHECK(violations == 0);
}

TEST_CASE("argmax invariance under a constant AM logit shift at fixed length") {
  // log_softmax removes any constant added to every logit, so the fused
  // scores of equal-length sequences are unchanged.
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ToyModels m(seed);
    auto cfg = exhaustive(0.5, 0.2, 3);
    std::vector<oracle::Scored> before;
    oracle::best_sequence(m.am, &m.lm, m.vocab.size(), m.features, cfg, 3, &before);
    AttentionAm shifted = m.am;
    auto params = shifted.parameters();
    // out_b is the last parameter: a 1 x V output bias.
    for (double& b : params.back()->values()) b += 2.5;
    std::vector<oracle::Scored> after;
    oracle::best_sequence(shifted, &m.lm, m.vocab.size(), m.features, cfg, 3, &after);
    REQUIRE(before.size() == after.size());
    auto best_of_len = [](const std::vector<oracle::Scored>& all, std::size_t len) {
      const oracle::Scored* best = nullptr;
      for (const auto& s : all) {
        if (s.tokens.size() != len) continue;
        if (!best || s.fused > best->fused) best = &s;
      }
      return best->tokens;
    };
    for (std::size_t len = 1; len <= 4; ++len) {
      CHECK(best_of_len(before, len) == best_of_len(after, len));
    }
  }
}

TEST_CASE("decoding is independent of the worker count") {
  CharVocab vocab("ab");
  AttentionAm am(AmConfig{5, 4, 4, 6, 6, 4, 7}, 5);
  LstmLm lm(LmConfig{5, 4, 8, 4, 1}, 6);
  Featurizer f(vocab, {4, 7});
  std::vector<Utterance> utts;
  for (int i = 0; i < 9; ++i) {
    std::string t = i % 2 ? "ab ba" : "bab";
    utts.push_back({"u" + std::to_string(i), t, f.featurize(t, 0.3, static_cast<std::uint64_t>(i))});
  }
  FusionConfig c;
  c.alpha = 0.2;
  c.beam_size = 3;
  auto one = decode_batch(am, &lm, vocab, utts, c, 1);
  auto four = decode_batch(am, &lm, vocab, utts, c, 4);
  for (std::size_t i = 0; i < utts.size(); ++i) {
    CHECK(one[i].scores == four[i].scores);
    CHECK(one[i].best().tokens == four[i].best().tokens);
  }
}
