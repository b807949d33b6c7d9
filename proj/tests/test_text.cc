#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "sfusion/error.h"
#include "sfusion/text.h"

using namespace sfusion;

TEST_CASE("encode adds SOS and EOS") {
  CharVocab v("ab");
  CHECK(v.encode("") == std::vector<TokenId>{CharVocab::kSos, CharVocab::kEos});
  CHECK(v.encode("ab") == std::vector<TokenId>{CharVocab::kSos, v.id('a'), v.id('b'), CharVocab::kEos});
  CHECK(v.size() == 5);
}

TEST_CASE("encode names the OOV character and position") {
  CharVocab v("ab");
  try {
    v.encode("abz");
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    std::string msg = e.what();
    CHECK(msg.find("'z'") != std::string::npos);
    CHECK(msg.find("position 2") != std::string::npos);
  }
}

TEST_CASE("decode inverts encode on random strings") {
  CharVocab v = CharVocab::latin();
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> len(0, 30);
  std::uniform_int_distribution<int> ch(0, 26);
  for (int i = 0; i < 1000; ++i) {
    std::string s;
    for (int n = len(rng); n > 0; --n) {
      int c = ch(rng);
      s += c == 26 ? ' ' : static_cast<char>('a' + c);
    }
    auto ids = v.encode(s);
    CHECK(ids.size() == s.size() + 2);
    CHECK(v.decode(ids) == s);
  }
}

TEST_CASE("vocab file round trip and hash") {
  CharVocab v("xyz");
  std::stringstream ss;
  v.write(ss);
  CharVocab back = CharVocab::read(ss);
  CHECK(back.symbols() == v.symbols());
  CHECK(back.hash() == v.hash());
  CHECK(CharVocab("xzy").hash() != v.hash());
  std::stringstream bad("a\nb\n");
  CHECK_THROWS_AS(CharVocab::read(bad), ParseError);
}

TEST_CASE("count_unigrams basic cases") {
  std::vector<std::string> lines{"a b", "a"};
  auto s = count_unigrams(lines);
  CHECK(s.counts == std::map<std::string, std::uint64_t>{{"a", 2}, {"b", 1}});
  CHECK(s.total_words == 3);
  CHECK(s.total_sentences == 2);
  std::istringstream empty("");
  CHECK(count_unigrams(empty).counts.empty());
}

TEST_CASE("corpus readers skip blanks and tolerate trailing newline") {
  std::istringstream a("One Two\n\n  \nthree\r\n");
  std::istringstream b("one two\nthree");
  auto la = read_corpus(a);
  auto lb = read_corpus(b);
  CHECK(la == lb);
  CHECK(la == std::vector<std::string>{"one two", "three"});
}

TEST_CASE("invalid UTF-8 reports the line number") {
  std::istringstream in("ok\nfine\nbad \xff byte\n");
  try {
    count_unigrams(in);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK(valid_utf8("caf\xc3\xa9"));
  CHECK_FALSE(valid_utf8("\xc3"));
  CHECK_FALSE(valid_utf8("\xe2\x82"));
}

TEST_CASE("sharded counting matches the sequential count on a Zipfian corpus") {
  auto words = make_word_list(2000, 3);
  SynthCorpusConfig cfg;
  cfg.n_sentences = 100000;
  cfg.seed = 5;
  auto corpus = synth_corpus(words, cfg);
  CorpusStats seq;
  for (const auto& line : corpus) {
    ++seq.total_sentences;
    std::istringstream ws(line);
    std::string w;
    while (ws >> w) {
      ++seq.counts[w];
      ++seq.total_words;
    }
  }
  for (unsigned workers : {1u, 3u, 8u}) CHECK(count_unigrams(corpus, workers) == seq);
}

TEST_CASE("count_unigrams is a monoid homomorphism") {
  auto words = make_word_list(50, 1);
  SynthCorpusConfig cfg;
  cfg.n_sentences = 300;
  auto corpus = synth_corpus(words, cfg);
  std::span<const std::string> all(corpus);
  auto a = count_unigrams(all.subspan(0, 120));
  auto b = count_unigrams(all.subspan(120));
  a.merge(b);
  CHECK(a == count_unigrams(all));
}

TEST_CASE("stats TSV round trip") {
  std::vector<std::string> lines{"b a", "c a"};
  auto s = count_unigrams(lines);
  std::stringstream ss;
  s.write(ss);
  CHECK(ss.str() == "a\t2\nb\t1\nc\t1\n");
  auto back = CorpusStats::read(ss);
  CHECK(back.counts == s.counts);
  CHECK(back.total_words == s.total_words);
  std::istringstream bad("a\tx\n");
  CHECK_THROWS_AS(CorpusStats::read(bad), ParseError);
}

TEST_CASE("synth_corpus is deterministic and sized") {
  auto words = make_word_list(100, 2);
  SynthCorpusConfig cfg;
  cfg.n_sentences = 1;
  CHECK(synth_corpus(words, cfg).size() == 1);
  cfg.n_sentences = 500;
  cfg.seed = 9;
  CHECK(synth_corpus(words, cfg) == synth_corpus(words, cfg));
  cfg.seed = 10;
  auto other = synth_corpus(words, cfg);
  cfg.seed = 9;
  CHECK(synth_corpus(words, cfg) != other);
}

TEST_CASE("exponent 0 gives near-uniform frequencies") {
  auto words = make_word_list(50, 4);
  SynthCorpusConfig cfg;
  cfg.zipf_exponent = 0.0;
  cfg.n_sentences = 20000;
  cfg.seed = 12;
  auto stats = count_unigrams(synth_corpus(words, cfg));
  double expected = static_cast<double>(stats.total_words) / 50.0;
  double chi2 = 0.0;
  for (const auto& w : words) {
    double d = static_cast<double>(stats.count(w)) - expected;
    chi2 += d * d / expected;
  }
  // Wilson-Hilferty 99th percentile of chi-square with 49 dof.
  double df = 49.0;
  double z = 2.326;
  double crit = df * std::pow(1.0 - 2.0 / (9 * df) + z * std::sqrt(2.0 / (9 * df)), 3);
  CHECK(chi2 < crit);
}

TEST_CASE("word frequencies follow the Zipf law") {
  auto words = make_word_list(200, 6);
  SynthCorpusConfig cfg;
  cfg.zipf_exponent = 1.0;
  cfg.n_sentences = 50000;
  auto stats = count_unigrams(synth_corpus(words, cfg));
  double c1 = static_cast<double>(stats.count(words[0]));
  for (std::size_t r : {1u, 3u, 9u}) {
    double ratio = c1 / static_cast<double>(stats.count(words[r]));
    CHECK(ratio == doctest::Approx(static_cast<double>(r + 1)).epsilon(0.1));
  }
}
