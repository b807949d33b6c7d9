#include "sfusion/dataset.h"

#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_set>

#include <json.hpp>

#include "sfusion/error.h"
#include "sfusion/log.h"
#include "sfusion/prune.h"

namespace sfusion {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return derive_seed(seed, h);
}

std::vector<Utterance> make_utterances(std::span<const std::string> transcripts,
                                       const Featurizer& featurizer, double noise_sigma,
                                       std::uint64_t seed, std::string_view id_prefix) {
  std::vector<Utterance> out;
  out.reserve(transcripts.size());
  for (std::size_t i = 0; i < transcripts.size(); ++i) {
    Utterance u;
    u.id = std::string(id_prefix) + "-" + std::to_string(i);
    u.transcript = transcripts[i];
    u.noise_sigma = noise_sigma;
    u.feature_seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    u.features = featurizer.featurize(u.transcript, noise_sigma, u.feature_seed);
    out.push_back(std::move(u));
  }
  return out;
}

void write_utterance_set(std::ostream& os, std::span<const Utterance> utterances,
                         const FeaturizerConfig& featurizer) {
  nlohmann::ordered_json header{{"feature_dim", featurizer.dim},
                                {"table_seed", featurizer.table_seed}};
  os << header.dump() << '\n';
  for (const auto& u : utterances) {
    nlohmann::ordered_json j{{"id", u.id},
                             {"transcript", u.transcript},
                             {"noise_sigma", u.noise_sigma},
                             {"seed", u.feature_seed}};
    os << j.dump() << '\n';
  }
}

void write_utterance_set_file(const std::string& path, std::span<const Utterance> utterances,
                              const FeaturizerConfig& featurizer) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write utterance set '" + path + "'");
  write_utterance_set(out, utterances, featurizer);
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<Utterance> read_utterance_set(std::istream& is, const CharVocab& vocab,
                                          FeaturizerConfig* featurizer_out) {
  std::string line;
  std::size_t lineno = 0;
  std::optional<FeaturizerConfig> fc;
  std::optional<Featurizer> featurizer;
  std::vector<Utterance> out;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      if (!fc) {
        fc = FeaturizerConfig{j.at("feature_dim").get<std::size_t>(),
                              j.at("table_seed").get<std::uint64_t>()};
        featurizer.emplace(vocab, *fc);
        continue;
      }
      Utterance u;
      u.id = j.at("id").get<std::string>();
      u.transcript = j.at("transcript").get<std::string>();
      u.noise_sigma = j.at("noise_sigma").get<double>();
      u.feature_seed = j.at("seed").get<std::uint64_t>();
      u.features = featurizer->featurize(u.transcript, u.noise_sigma, u.feature_seed);
      out.push_back(std::move(u));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("utterance set line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!fc) throw ParseError("utterance set: missing header line");
  if (featurizer_out) *featurizer_out = *fc;
  return out;
}

std::vector<Utterance> read_utterance_set_file(const std::string& path, const CharVocab& vocab,
                                               FeaturizerConfig* featurizer_out) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open utterance set '" + path + "'");
  return read_utterance_set(in, vocab, featurizer_out);
}

EvalSelector parse_selector(std::string_view name) {
  if (name == "lm_integration") return EvalSelector::kLmIntegration;
  if (name == "surprising_pron") return EvalSelector::kSurprisingPron;
  if (name == "random") return EvalSelector::kRandom;
  throw ContractError("unknown selector '" + std::string(name) +
                      "' (expected lm_integration, surprising_pron, random)");
}

std::vector<std::size_t> eligible_sentences(std::span<const std::string> corpus,
                                            const EvalSetConfig& config) {
  std::vector<std::size_t> out;
  switch (config.selector) {
    case EvalSelector::kRandom:
      for (std::size_t i = 0; i < corpus.size(); ++i) out.push_back(i);
      break;
    case EvalSelector::kLmIntegration: {
      std::unordered_set<std::string> words(config.wordlist.begin(), config.wordlist.end());
      for (std::size_t i = 0; i < corpus.size(); ++i) {
        for (const auto& w : split_words(corpus[i])) {
          if (words.contains(w)) {
            out.push_back(i);
            break;
          }
        }
      }
      break;
    }
    case EvalSelector::kSurprisingPron: {
      if (!config.lexicon || !config.g2p) {
        throw ContractError("surprising_pron selector needs a lexicon and a G2P map");
      }
      std::unordered_map<std::string, bool> memo;
      auto surprising = [&](const std::string& w) {
        auto it = memo.find(w);
        if (it != memo.end()) return it->second;
        bool s = config.lexicon->contains(w) &&
                 surprising_pronunciation(w, *config.lexicon, *config.g2p);
        memo.emplace(w, s);
        return s;
      };
      for (std::size_t i = 0; i < corpus.size(); ++i) {
        for (const auto& w : split_words(corpus[i])) {
          if (surprising(w)) {
            out.push_back(i);
            break;
          }
        }
      }
      break;
    }
  }
  return out;
}

std::vector<Utterance> build_eval_set(std::span<const std::string> corpus, const CharVocab& vocab,
                                      const EvalSetConfig& config) {
  auto eligible = eligible_sentences(corpus, config);
  if (eligible.empty()) throw ContractError("build_eval_set: no eligible sentences");
  std::vector<std::string> pool;
  pool.reserve(eligible.size());
  for (std::size_t i : eligible) pool.push_back(corpus[i]);
  auto picked = sample_to_target(pool, config.n, derive_seed(config.seed, "eval-set"));
  Featurizer featurizer(vocab, config.featurizer);
  return make_utterances(picked.lines, featurizer, config.noise_sigma,
                         derive_seed(config.seed, "features"), "eval");
}

}  // namespace sfusion
