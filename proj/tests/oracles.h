#pragma once

// Independent second implementations used as test oracles.

#include <algorithm>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sfusion/fusion.h"
#include "sfusion/g2p.h"
#include "sfusion/models.h"
#include "sfusion/text.h"

namespace oracle {

using sfusion::TokenId;

// Memoized recursion over (i, j) suffixes.
inline std::size_t edit_distance(const std::vector<std::string>& a,
                                 const std::vector<std::string>& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    std::size_t best = go(i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
    best = std::min(best, go(i + 1, j) + 1);
    best = std::min(best, go(i, j + 1) + 1);
    memo[key] = best;
    return best;
  };
  return go(0, 0);
}

// Every pronunciation reachable by segmenting the word into map keys.
inline std::set<sfusion::Pronunciation> predictions(const std::string& word,
                                                    const sfusion::G2PMap& g2p) {
  std::set<sfusion::Pronunciation> out;
  std::function<void(std::size_t, sfusion::Pronunciation&)> go = [&](std::size_t pos,
                                                                     sfusion::Pronunciation& acc) {
    if (pos == word.size()) {
      out.insert(acc);
      return;
    }
    for (const auto& [key, alts] : g2p.entries()) {
      if (word.compare(pos, key.size(), key) != 0) continue;
      for (const auto& alt : alts) {
        std::size_t mark = acc.size();
        acc.insert(acc.end(), alt.begin(), alt.end());
        go(pos + key.size(), acc);
        acc.resize(mark);
      }
    }
  };
  sfusion::Pronunciation acc;
  go(0, acc);
  return out;
}

inline bool surprising(const std::string& word, const sfusion::Lexicon& lex,
                       const sfusion::G2PMap& g2p) {
  return !predictions(word, g2p).contains(lex.at(word));
}

struct Scored {
  std::vector<TokenId> tokens;  // ends with EOS
  double am = 0.0;
  double lm = 0.0;
  std::size_t coverage = 0;
  double fused = 0.0;
};

// Scores every EOS-terminated sequence with at most max_len non-EOS tokens
// by teacher forcing, depth first. Returns the best by fused score, ties to
// the lexicographically smaller sequence.
inline Scored best_sequence(const sfusion::AttentionAm& am, const sfusion::LstmLm* lm,
                            std::size_t vocab_size, const sfusion::Features& features,
                            const sfusion::FusionConfig& cfg, std::size_t max_len,
                            std::vector<Scored>* all = nullptr) {
  auto enc = am.encode(features);
  std::size_t frames = enc.frames();
  Scored best;
  best.fused = -std::numeric_limits<double>::infinity();
  std::vector<TokenId> prefix;
  std::function<void(const sfusion::AmDecoderState&, const sfusion::LmState&, TokenId, double,
                     double, const std::vector<double>&)>
      go = [&](const sfusion::AmDecoderState& as, const sfusion::LmState& ls, TokenId prev,
               double am_lp, double lm_lp, const std::vector<double>& mass) {
        auto a = am.decode_step(as, prev, enc);
        sfusion::LmStepOutput l;
        if (lm) l = lm->step(ls, prev);
        std::vector<double> m = mass;
        for (std::size_t j = 0; j < frames; ++j) m[j] += a.attention[j];
        std::size_t cov = static_cast<std::size_t>(
            std::count_if(m.begin(), m.end(), [&](double x) { return x > cfg.tau; }));
        for (std::size_t v = 1; v < vocab_size; ++v) {
          auto tok = static_cast<TokenId>(v);
          double nam = am_lp + a.logprobs[v];
          double nlm = lm_lp + (lm ? l.logprobs[v] : 0.0);
          if (tok == sfusion::CharVocab::kEos) {
            Scored s;
            s.tokens = prefix;
            s.tokens.push_back(tok);
            s.am = nam;
            s.lm = nlm;
            s.coverage = cov;
            s.fused = nam + cfg.alpha * nlm + cfg.beta * static_cast<double>(cov);
            if (all) all->push_back(s);
            if (s.fused > best.fused || (s.fused == best.fused && s.tokens < best.tokens)) {
              best = s;
            }
          } else if (prefix.size() < max_len) {
            prefix.push_back(tok);
            go(a.next, lm ? l.next : ls, tok, nam, nlm, m);
            prefix.pop_back();
          }
        }
      };
  go(am.init_state(), lm ? lm->init() : sfusion::LmState{}, sfusion::CharVocab::kSos, 0.0, 0.0,
     std::vector<double>(frames, 0.0));
  return best;
}

}  // namespace oracle
