#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "sfusion/checkpoint.h"
#include "sfusion/dataset.h"
#include "sfusion/error.h"
#include "sfusion/fusion.h"
#include "sfusion/models.h"
#include "sfusion/training.h"

using namespace sfusion;
namespace fs = std::filesystem;

namespace {

LmConfig tiny_lm(std::size_t vocab) {
  LmConfig c;
  c.vocab_size = vocab;
  c.embed_dim = 3;
  c.hidden = 4;
  c.projection = 2;
  return c;
}

AmConfig tiny_am(std::size_t vocab) {
  AmConfig c;
  c.vocab_size = vocab;
  c.feature_dim = 3;
  c.embed_dim = 3;
  c.encoder_hidden = 3;
  c.decoder_hidden = 4;
  c.attention_dim = 2;
  return c;
}

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("sfusion_test_" + name);
}

}  // namespace

TEST_CASE("featurize: determinism and noise-free frames") {
  CharVocab v("ab");
  Featurizer f(v, {});
  auto x = f.featurize("abab", 0.0, 1);
  CHECK(x.rows() == 4);
  CHECK(x.cols() == 16);
  for (std::size_t j = 0; j < 16; ++j) {
    CHECK(x.at(0, j) == x.at(2, j));
    CHECK(x.at(1, j) == x.at(3, j));
  }
  auto y1 = f.featurize("ab a", 0.3, 42);
  auto y2 = f.featurize("ab a", 0.3, 42);
  CHECK(std::equal(y1.values().begin(), y1.values().end(), y2.values().begin()));
  auto y3 = f.featurize("ab a", 0.3, 43);
  CHECK_FALSE(std::equal(y1.values().begin(), y1.values().end(), y3.values().begin()));
  CHECK_THROWS_AS(f.featurize("abc", 0.0, 1), ContractError);
}

TEST_CASE("featurize: distinct characters have distinct mean frames") {
  CharVocab v("ab");
  Featurizer f(v, {});
  std::vector<double> ma(16, 0.0), mb(16, 0.0);
  const int n = 200;
  for (int s = 0; s < n; ++s) {
    auto x = f.featurize("ab", 0.1, static_cast<std::uint64_t>(s));
    for (std::size_t j = 0; j < 16; ++j) {
      ma[j] += x.at(0, j) / n;
      mb[j] += x.at(1, j) / n;
    }
  }
  double d = 0;
  for (std::size_t j = 0; j < 16; ++j) d += (ma[j] - mb[j]) * (ma[j] - mb[j]);
  CHECK(d > 0.0);
}

TEST_CASE("LM step outputs are distributions and chain to sequence_logprob") {
  CharVocab v("abc");
  LstmLm lm(LmConfig{v.size(), 8, 12, 6, 2}, 3);
  auto ids = v.encode("ab cab");
  LmState st = lm.init();
  double total = 0;
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
    auto out = lm.step(st, ids[t]);
    double z = 0;
    for (double lp : out.logprobs) z += std::exp(lp);
    CHECK(std::abs(z - 1.0) < 1e-9);
    total += out.logprobs[ids[t + 1]];
    st = out.next;
  }
  CHECK(lm.sequence_logprob(ids) == doctest::Approx(total).epsilon(1e-12));
  ad::Graph g;
  auto b = lm.bind(g);
  CHECK(g.scalar(lm.sequence_logprob(g, b, ids)) == doctest::Approx(total).epsilon(1e-12));
}

TEST_CASE("AM attention is normalized and graph route matches inference") {
  CharVocab v("abc");
  AttentionAm am(tiny_am(v.size()), 4);
  Featurizer f(v, {3, 7});
  auto x = f.featurize("abca", 0.2, 1);
  auto enc = am.encode(x);
  auto ids = v.encode("cab");
  auto st = am.init_state();
  double total = 0;
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
    auto out = am.decode_step(st, ids[t], enc);
    double za = std::accumulate(out.attention.begin(), out.attention.end(), 0.0);
    CHECK(std::abs(za - 1.0) < 1e-9);
    for (double a : out.attention) CHECK(a >= 0.0);
    double z = 0;
    for (double lp : out.logprobs) z += std::exp(lp);
    CHECK(std::abs(z - 1.0) < 1e-9);
    total += out.logprobs[ids[t + 1]];
    st = out.next;
  }
  CHECK(am.sequence_logprob(enc, ids) == doctest::Approx(total).epsilon(1e-12));
  ad::Graph g;
  auto b = am.bind(g);
  auto genc = am.encode(g, b, x);
  CHECK(g.scalar(am.sequence_logprob(g, b, genc, ids)) == doctest::Approx(total).epsilon(1e-12));
}

TEST_CASE("attention over a single frame is one") {
  CharVocab v("ab");
  AttentionAm am(tiny_am(v.size()), 1);
  Featurizer f(v, {3, 7});
  auto enc = am.encode(f.featurize("a", 0.0, 0));
  auto out = am.decode_step(am.init_state(), CharVocab::kSos, enc);
  REQUIRE(out.attention.size() == 1);
  CHECK(out.attention[0] == 1.0);
}

TEST_CASE("forward passes are deterministic") {
  CharVocab v("ab");
  LstmLm a(tiny_lm(v.size()), 9), b(tiny_lm(v.size()), 9);
  auto ids = v.encode("abba");
  CHECK(a.sequence_logprob(ids) == b.sequence_logprob(ids));
}

TEST_CASE("end-to-end CE gradients pass the finite-difference check") {
  CharVocab v("ab");
  SUBCASE("lm") {
    LstmLm lm(tiny_lm(v.size()), 2);
    auto ids = v.encode("ab ba");
    auto params = lm.parameters();
    double err = ad::grad_check(
        [&](ad::Graph& g) {
          auto b = lm.bind(g);
          return lm.sequence_logprob(g, b, ids);
        },
        params);
    CHECK(err < 1e-4);
  }
  SUBCASE("am") {
    AttentionAm am(tiny_am(v.size()), 2);
    Featurizer f(v, {3, 7});
    auto x = f.featurize("ab", 0.1, 3);
    auto ids = v.encode("ab");
    auto params = am.parameters();
    double err = ad::grad_check(
        [&](ad::Graph& g) {
          auto b = am.bind(g);
          auto enc = am.encode(g, b, x);
          return am.sequence_logprob(g, b, enc, ids);
        },
        params);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("LM trained on a run of one letter prefers it") {
  CharVocab v("ab");
  LstmLm lm(LmConfig{v.size(), 8, 16, 8, 1}, 1);
  std::vector<std::string> corpus(20, "aaaaaa");
  TrainConfig tc;
  tc.learning_rate = 0.02;
  tc.epochs = 10;
  auto log = ce_pretrain_lm(lm, v, corpus, tc);
  CHECK(log.final_loss < log.initial_loss);
  auto st = lm.init();
  auto ids = v.encode("aaaaaa");
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
    auto out = lm.step(st, ids[t]);
    CHECK(out.logprobs[v.id('a')] > out.logprobs[v.id('b')]);
    st = out.next;
  }
}

TEST_CASE("CE pretraining: lr 0 and determinism") {
  CharVocab v("ab");
  std::vector<std::string> corpus{"ab", "ba a", "bb"};
  LstmLm lm(tiny_lm(v.size()), 4);
  std::vector<double> before;
  for (auto* p : lm.parameters()) before.insert(before.end(), p->values().begin(), p->values().end());
  TrainConfig tc;
  tc.learning_rate = 0.0;
  tc.epochs = 2;
  ce_pretrain_lm(lm, v, corpus, tc);
  std::vector<double> after;
  for (auto* p : lm.parameters()) after.insert(after.end(), p->values().begin(), p->values().end());
  CHECK(before == after);

  tc.learning_rate = 0.01;
  LstmLm a(tiny_lm(v.size()), 4), b(tiny_lm(v.size()), 4);
  auto la = ce_pretrain_lm(a, v, corpus, tc);
  auto lb = ce_pretrain_lm(b, v, corpus, tc);
  CHECK(la.update_loss == lb.update_loss);
  CHECK_THROWS_AS(ce_pretrain_lm(a, v, std::vector<std::string>{}, tc), ContractError);
}

TEST_CASE("toy AM learns a noise-free task") {
  CharVocab v = CharVocab::latin();
  std::vector<std::string> words{"cat", "dog", "sun", "map", "pen", "red", "box", "hat", "cup", "jam"};
  std::vector<std::string> transcripts;
  for (std::size_t i = 0; i < 20; ++i) {
    std::string t = words[i % 10];
    if (i >= 10) t += " " + words[(i * 3 + 1) % 10];
    transcripts.push_back(t);
  }
  Featurizer f(v, {});
  auto utts = make_utterances(transcripts, f, 0.0, 1);
  AmConfig ac;
  ac.vocab_size = v.size();
  ac.encoder_hidden = 32;
  ac.decoder_hidden = 32;
  ac.attention_dim = 16;
  AttentionAm am(ac, 1);
  TrainConfig tc;
  tc.learning_rate = 0.01;
  tc.epochs = 100;
  tc.max_updates = 2000;
  auto log = ce_pretrain_am(am, v, utts, tc);
  MESSAGE("toy AM final loss " << log.final_loss << " nats/char");
  CHECK(log.final_loss < 0.1);

  // Beam 1 with a zero delta: EOS completes only when it is the top candidate.
  FusionConfig greedy;
  greedy.beam_size = 1;
  greedy.max_eos_logprob_delta = 0.0;
  std::size_t correct = 0, total = 0;
  for (const auto& u : utts) {
    auto r = beam_search(am, nullptr, v, u.features, greedy);
    const std::string& h = r.best().text;
    for (std::size_t i = 0; i < u.transcript.size(); ++i) {
      correct += i < h.size() && h[i] == u.transcript[i];
    }
    total += std::max(u.transcript.size(), h.size());
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(total) >= 0.95);
}

TEST_CASE("checkpoint round trip is bit exact") {
  CharVocab v("abc");
  LstmLm lm(LmConfig{v.size(), 4, 6, 3, 2}, 5);
  AttentionAm am(tiny_am(v.size()), 6);
  auto lp = temp_path("lm.ck");
  auto ap = temp_path("am.ck");
  save_checkpoint(lm, v.hash(), lp.string());
  save_checkpoint(am, v.hash(), ap.string());
  auto lm2 = load_lm_checkpoint(lp.string(), v.hash());
  auto am2 = load_am_checkpoint(ap.string(), v.hash());
  auto cmp = [](auto a, auto b) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i]->shape() == b[i]->shape());
      CHECK(std::equal(a[i]->values().begin(), a[i]->values().end(), b[i]->values().begin()));
    }
  };
  cmp(std::as_const(lm).parameters(), std::as_const(lm2).parameters());
  cmp(std::as_const(am).parameters(), std::as_const(am2).parameters());
  CHECK(lm2.config().layers == 2);

  SUBCASE("vocab hash mismatch is refused") {
    CHECK_THROWS_AS(load_lm_checkpoint(lp.string(), CharVocab("abd").hash()), ParseError);
  }
  SUBCASE("wrong kind is refused") {
    CHECK_THROWS_AS(load_am_checkpoint(lp.string(), v.hash()), ParseError);
  }
  SUBCASE("truncated file is a parse error") {
    auto size = fs::file_size(lp);
    auto tp = temp_path("trunc.ck");
    fs::copy_file(lp, tp, fs::copy_options::overwrite_existing);
    fs::resize_file(tp, size - 5);
    try {
      load_lm_checkpoint(tp.string(), v.hash());
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    }
    fs::remove(tp);
  }
  SUBCASE("version mismatch is refused") {
    auto vp = temp_path("ver.ck");
    fs::copy_file(lp, vp, fs::copy_options::overwrite_existing);
    {
      std::fstream io(vp, std::ios::in | std::ios::out | std::ios::binary);
      io.seekp(4);
      char two[4] = {2, 0, 0, 0};
      io.write(two, 4);
    }
    try {
      load_lm_checkpoint(vp.string(), v.hash());
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("version 2") != std::string::npos);
    }
    fs::remove(vp);
  }
  CHECK_THROWS_AS(load_lm_checkpoint(temp_path("missing.ck").string(), v.hash()), IoError);
}
