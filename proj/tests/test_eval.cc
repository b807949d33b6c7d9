#include <doctest.h>

#include <random>
#include <sstream>

#include "oracles.h"
#include "sfusion/dataset.h"
#include "sfusion/error.h"
#include "sfusion/eval.h"
#include "sfusion/g2p.h"
#include "sfusion/log.h"

using namespace sfusion;

namespace {

std::vector<std::string> random_words(std::mt19937_64& rng, std::size_t max_len, int alphabet) {
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<int> w(0, alphabet - 1);
  std::vector<std::string> out(len(rng));
  for (auto& s : out) s = "w" + std::to_string(w(rng));
  return out;
}

G2PMap random_map(std::mt19937_64& rng) {
  const std::string letters = "abcd";
  const std::vector<std::string> phones{"p", "q", "r", "s", "t"};
  std::uniform_int_distribution<int> pick_l(0, 3), pick_p(0, 4), key_len(1, 3), n_alt(1, 2),
      ph_len(0, 2);
  G2PMap m;
  for (char c : letters) {
    if (std::uniform_int_distribution<int>(0, 5)(rng) == 0) continue;  // sometimes missing
    for (int a = n_alt(rng); a > 0; --a) {
      Pronunciation p;
      for (int k = ph_len(rng) + (a == 1 ? 1 : 0); k > 0; --k) p.push_back(phones[pick_p(rng)]);
      m.add(std::string(1, c), p);
    }
  }
  for (int extra = 0; extra < 6; ++extra) {
    std::string key;
    for (int k = key_len(rng) + 1; k > 0 && key.size() < 3; --k) key += letters[pick_l(rng)];
    Pronunciation p;
    for (int k = ph_len(rng) + 1; k > 0; --k) p.push_back(phones[pick_p(rng)]);
    m.add(key, p);
  }
  return m;
}

}  // namespace

TEST_CASE("edit distance examples") {
  auto e = edit_distance_words("a b c", "a x c");
  CHECK(e.total == 1);
  CHECK(e.substitutions == 1);
  CHECK(edit_distance_words("a b", "a b").total == 0);
  auto ins = edit_distance_words("a b c", "a c");
  CHECK(ins.insertions == 1);
  CHECK(ins.total == 1);
  auto del = edit_distance_words("a", "a b c");
  CHECK(del.deletions == 2);
  CHECK(edit_distance_words("", "").total == 0);
}

TEST_CASE("edit distance matches the memoized oracle") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 1000; ++i) {
    auto h = random_words(rng, 8, 4);
    auto r = random_words(rng, 8, 4);
    auto e = edit_distance_words(h, r);
    CHECK(e.total == oracle::edit_distance(h, r));
    CHECK(e.total == e.substitutions + e.insertions + e.deletions);
  }
}

TEST_CASE("edit distance depends only on the equality pattern") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    auto h = random_words(rng, 7, 5);
    auto r = random_words(rng, 7, 5);
    auto relabel = [](std::vector<std::string> v) {
      for (auto& s : v) s = "z" + s + "q";
      return v;
    };
    CHECK(edit_distance_words(h, r).total == edit_distance_words(relabel(h), relabel(r)).total);
  }
}

TEST_CASE("truncation boundary is inclusive") {
  CHECK(is_truncated(3, 6));
  CHECK_FALSE(is_truncated(4, 6));
  CHECK(is_truncated(0, 1));
  std::vector<HypRef> pairs{{"a", "x y z", "a b c d e f"}, {"b", "w x y z", "a b c d e f"},
                            {"c", "", "a"},                 {"d", "x", ""}};
  std::vector<std::string> warnings;
  set_warning_sink([&](std::string_view w) { warnings.emplace_back(w); });
  auto p = truncation_partition(pairs);
  set_warning_sink(nullptr);
  CHECK(p.truncated == std::vector<std::size_t>{0, 2});
  CHECK(p.rest == std::vector<std::size_t>{1});
  CHECK(p.excluded == std::vector<std::size_t>{3});
  CHECK(warnings.size() == 1);
}

TEST_CASE("partitioned edits reconstruct the totals") {
  std::mt19937_64 rng(8);
  std::vector<HypRef> pairs;
  for (int i = 0; i < 200; ++i) {
    auto h = random_words(rng, 6, 3);
    auto r = random_words(rng, 9, 3);
    if (r.empty()) r.push_back("w0");
    pairs.push_back({std::to_string(i), join_words(h), join_words(r)});
  }
  set_warning_sink([](std::string_view) {});
  auto rep = score_pairs(pairs);
  set_warning_sink(nullptr);
  std::size_t rest_edits = 0, rest_words = 0;
  for (const auto& r : rep.records) {
    if (!r.truncated) {
      rest_edits += r.edits;
      rest_words += r.ref_words;
    }
  }
  double rest_wer = static_cast<double>(rest_edits) / static_cast<double>(rest_words);
  double recon = rep.trunc_wer * static_cast<double>(rep.trunc_ref_words) +
                 rest_wer * static_cast<double>(rest_words);
  CHECK(recon == doctest::Approx(static_cast<double>(rep.total_edits)).epsilon(1e-12));
  CHECK(rep.wer == doctest::Approx(static_cast<double>(rep.total_edits) / rep.total_ref_words));
  CHECK(rep.trunc_frac >= 0.0);
  CHECK(rep.trunc_frac <= 1.0);
}

TEST_CASE("LM-integration word list") {
  CorpusStats am, lm;
  am.counts = {{"common", 50}, {"rare", 3}, {"five", 5}};
  lm.counts = {{"common", 500}, {"rare", 150}, {"five", 149}, {"lmonly", 200}};
  auto list = build_lm_integration_wordlist(am, lm);
  CHECK(list == std::vector<std::string>{"lmonly", "rare"});
}

TEST_CASE("LM-integration word list matches a brute-force scan") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> c(0, 400);
  CorpusStats am, lm;
  std::vector<std::string> universe;
  for (int i = 0; i < 10000; ++i) universe.push_back("w" + std::to_string(i));
  for (const auto& w : universe) {
    int a = c(rng) / 40, l = c(rng);
    if (a) am.counts[w] = static_cast<std::uint64_t>(a);
    if (l) lm.counts[w] = static_cast<std::uint64_t>(l);
  }
  std::vector<std::string> expect;
  for (const auto& w : universe) {
    if (am.count(w) <= 5 && lm.count(w) >= 150) expect.push_back(w);
  }
  std::sort(expect.begin(), expect.end());
  CHECK(build_lm_integration_wordlist(am, lm, 5, 150) == expect);
}

TEST_CASE("surprising pronunciation examples") {
  G2PMap m;
  m.add("c", {"k"});
  m.add("a", {"ae"});
  m.add("t", {"t"});
  Lexicon lex;
  lex.add("cat", {"k", "ae", "t"});
  lex.add("sat", {"s", "ae", "t"});
  CHECK_FALSE(surprising_pronunciation("cat", lex, m));
  CHECK(surprising_pronunciation("sat", lex, m));
  CHECK_THROWS_AS(surprising_pronunciation("dog", lex, m), ContractError);
  m.add("ch", {"ch"});
  lex.add("chat", {"ch", "ae", "t"});
  CHECK_FALSE(surprising_pronunciation("chat", lex, m));
}

TEST_CASE("g2p map and lexicon files") {
  std::istringstream in("c\tk\nc\ts\nch\tch\nh\t\n");
  auto m = G2PMap::read(in);
  CHECK(m.correspondence_count() == 4);
  CHECK(m.entries().size() == 3);
  CHECK(m.phoneme_alphabet() == std::set<std::string>{"ch", "k", "s"});
  std::istringstream lin("chic\tch ih k\n");
  auto lex = Lexicon::read(lin);
  CHECK(lex.at("chic") == Pronunciation{"ch", "ih", "k"});
  std::istringstream bad("nokey\n");
  CHECK_THROWS_AS(G2PMap::read(bad), ParseError);
}

TEST_CASE("surprise detection matches exhaustive segmentation") {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> wl(1, 6), l(0, 3);
  int checked = 0;
  for (int map_i = 0; map_i < 25; ++map_i) {
    G2PMap m = random_map(rng);
    Lexicon lex;
    std::vector<std::string> words;
    while (words.size() < 20) {
      std::string w;
      for (int k = wl(rng); k > 0; --k) w += static_cast<char>('a' + l(rng));
      if (lex.contains(w)) continue;
      // Half the time use a predicted pronunciation, else a random one.
      auto preds = oracle::predictions(w, m);
      Pronunciation p;
      if (!preds.empty() && rng() % 2) {
        auto it = preds.begin();
        std::advance(it, static_cast<long>(rng() % preds.size()));
        p = *it;
      } else {
        for (int k = wl(rng); k > 0; --k) p.push_back(std::string(1, "pqrst"[rng() % 5]));
      }
      lex.add(w, p);
      words.push_back(w);
    }
    for (const auto& w : words) {
      CHECK(surprising_pronunciation(w, lex, m) == oracle::surprising(w, lex, m));
      ++checked;
    }
  }
  CHECK(checked == 500);
}

TEST_CASE("adding map entries never makes a word surprising") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    G2PMap m = random_map(rng);
    G2PMap bigger = m;
    bigger.add("ab", {"q"});
    bigger.add("d", {"r", "s"});
    Lexicon lex;
    lex.add("abd", {"q", "r", "s"});
    lex.add("dab", {"p", "q"});
    lex.add("cab", {"s", "q"});
    for (const auto& [w, p] : lex.entries()) {
      if (!surprising_pronunciation(w, lex, m)) CHECK_FALSE(surprising_pronunciation(w, lex, bigger));
    }
  }
}

TEST_CASE("eval set construction") {
  CharVocab v = CharVocab::latin();
  std::vector<std::string> corpus{"alpha beta", "gamma", "beta delta", "epsilon", "zeta beta"};
  EvalSetConfig cfg;
  cfg.n = 3;
  cfg.seed = 5;
  cfg.featurizer = {4, 7};
  auto a = build_eval_set(corpus, v, cfg);
  auto b = build_eval_set(corpus, v, cfg);
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a[i].transcript == b[i].transcript);
    CHECK(std::equal(a[i].features.values().begin(), a[i].features.values().end(),
                     b[i].features.values().begin()));
  }
  cfg.selector = EvalSelector::kLmIntegration;
  cfg.wordlist = {"beta"};
  cfg.n = 10;
  auto c = build_eval_set(corpus, v, cfg);
  CHECK(c.size() == 3);
  for (const auto& u : c) {
    auto ws = split_words(u.transcript);
    CHECK(std::find(ws.begin(), ws.end(), "beta") != ws.end());
  }
  cfg.wordlist = {"omega"};
  CHECK_THROWS_AS(build_eval_set(corpus, v, cfg), ContractError);

  G2PMap m;
  for (char ch : std::string("abcdefghijklmnopqrstuvwxyz")) m.add(std::string(1, ch), {std::string(1, ch)});
  Lexicon lex;
  lex.add("gamma", {"g", "a", "m", "m", "a"});
  lex.add("zeta", {"z", "ee", "t", "a"});
  cfg.selector = EvalSelector::kSurprisingPron;
  cfg.lexicon = &lex;
  cfg.g2p = &m;
  auto s = build_eval_set(corpus, v, cfg);
  REQUIRE(s.size() == 1);
  CHECK(s[0].transcript == "zeta beta");
}

TEST_CASE("utterance set file round trip") {
  CharVocab v("ab");
  Featurizer f(v, {4, 9});
  std::vector<std::string> t{"ab", "b a"};
  auto utts = make_utterances(t, f, 0.25, 3);
  std::stringstream ss;
  write_utterance_set(ss, utts, f.config());
  FeaturizerConfig fc;
  auto back = read_utterance_set(ss, v, &fc);
  CHECK(fc.table_seed == 9);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].id == utts[i].id);
    CHECK(std::equal(back[i].features.values().begin(), back[i].features.values().end(),
                     utts[i].features.values().begin()));
  }
}

TEST_CASE("sweep consistency") {
  CharVocab v("ab");
  AttentionAm am(AmConfig{5, 4, 4, 6, 6, 4, 7}, 2);
  LstmLm lm(LmConfig{5, 4, 8, 4, 1}, 3);
  Featurizer f(v, {4, 7});
  std::vector<std::string> t{"ab", "b a", "a b a", "bb"};
  auto utts = make_utterances(t, f, 0.3, 1);
  FusionConfig base;
  base.alpha = 0.1;
  base.beta = 0.06;
  std::vector<SweepCell> one{{3, 0.5}};
  auto rows = sweep(am, &lm, v, utts, one, base);
  FusionConfig c = base;
  c.beam_size = 3;
  c.max_eos_logprob_delta = 0.5;
  auto rep = evaluate(am, &lm, v, utts, c);
  CHECK(rows[0].wer == rep.wer);
  CHECK(rows[0].trunc_frac == rep.trunc_frac);

  std::vector<SweepCell> grid{{2, 0.05}, {4, 10.0}, {2, 0.05}, {20, 0.05}};
  auto g1 = sweep(am, &lm, v, utts, grid, base);
  auto g2 = sweep(am, &lm, v, utts, grid, base, 3);
  CHECK(g1[0].wer == g1[2].wer);
  std::ostringstream a, b;
  write_sweep_csv(a, g1);
  write_sweep_csv(b, g2);
  CHECK(a.str() == b.str());
  CHECK(a.str().rfind("beam,delta,wer,trunc_wer,trunc_frac\n", 0) == 0);
  CHECK_THROWS_AS(sweep(am, &lm, v, utts, std::vector<SweepCell>{}, base), ContractError);
  std::vector<SweepCell> bad{{0, 0.1}};
  try {
    sweep(am, &lm, v, utts, bad, base);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("beam=0") != std::string::npos);
  }
}
