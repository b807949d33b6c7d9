#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sfusion/g2p.h"
#include "sfusion/models.h"
#include "sfusion/text.h"

namespace sfusion {

// splitmix64 of seed combined with a stream index or label; used for named
// sub-seeds and per-utterance noise seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

// Featurizes transcripts in order. Utterance i gets id "<prefix>-<i>" and
// noise seed derive_seed(seed, i).
std::vector<Utterance> make_utterances(std::span<const std::string> transcripts,
                                       const Featurizer& featurizer, double noise_sigma,
                                       std::uint64_t seed, std::string_view id_prefix = "utt");

// JSON lines {id, transcript, noise_sigma, seed}, preceded by a header line
// {feature_dim, table_seed}. Frames are regenerated on read.
void write_utterance_set(std::ostream& os, std::span<const Utterance> utterances,
                         const FeaturizerConfig& featurizer);
void write_utterance_set_file(const std::string& path, std::span<const Utterance> utterances,
                              const FeaturizerConfig& featurizer);
std::vector<Utterance> read_utterance_set(std::istream& is, const CharVocab& vocab,
                                          FeaturizerConfig* featurizer_out = nullptr);
std::vector<Utterance> read_utterance_set_file(const std::string& path, const CharVocab& vocab,
                                               FeaturizerConfig* featurizer_out = nullptr);

enum class EvalSelector { kLmIntegration, kSurprisingPron, kRandom };
EvalSelector parse_selector(std::string_view name);  // lm_integration | surprising_pron | random

struct EvalSetConfig {
  EvalSelector selector = EvalSelector::kRandom;
  std::size_t n = 10000;
  std::uint64_t seed = 1;
  double noise_sigma = 0.0;
  FeaturizerConfig featurizer;
  std::vector<std::string> wordlist;  // lm_integration: tail words
  const Lexicon* lexicon = nullptr;   // surprising_pron
  const G2PMap* g2p = nullptr;        // surprising_pron
};

// Sentences eligible under the selector, by corpus index:
//   lm_integration: contains a word of the list;
//   surprising_pron: contains a lexicon word with a surprising pronunciation;
//   random: every sentence.
std::vector<std::size_t> eligible_sentences(std::span<const std::string> corpus,
                                            const EvalSetConfig& config);

// Exactly min(n, eligible) utterances chosen by seeded sampling without
// replacement, in corpus order. No eligible sentence -> ContractError.
std::vector<Utterance> build_eval_set(std::span<const std::string> corpus, const CharVocab& vocab,
                                      const EvalSetConfig& config);

}  // namespace sfusion
