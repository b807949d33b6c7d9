#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfusion/fusion.h"
#include "sfusion/models.h"
#include "sfusion/mwer.h"
#include "sfusion/prune.h"
#include "sfusion/text.h"
#include "sfusion/training.h"

namespace sfcli {

using nlohmann::ordered_json;

// Resolved experiment configuration. Precedence, lowest first: built-in
// defaults, the --config file, command-line flags. Every key of the file
// must exist in the defaults with a compatible type.
class ExperimentConfig {
 public:
  ExperimentConfig();

  static const ordered_json& defaults();

  // Merges a JSON document over the current values. Throws ParseError
  // naming the offending key path.
  void merge(const ordered_json& doc, const std::string& origin);
  void merge_file(const std::string& path);
  // Sets one value by JSON pointer, e.g. "/fusion/alpha".
  void set(const std::string& pointer, ordered_json value, const std::string& origin);

  const ordered_json& json() const { return doc_; }

  std::uint64_t seed() const;
  // derive_seed(seed, name); every lookup is remembered for the run log.
  std::uint64_t sub_seed(const std::string& name) const;
  const std::map<std::string, std::uint64_t>& used_seeds() const { return used_; }

  // Path from the paths section; nullopt when unset.
  std::optional<std::string> path(const std::string& key) const;
  // Throws ContractError naming the flag and config key when unset.
  std::string required_path(const std::string& key, const std::string& flag) const;

  sfusion::CharVocab vocab() const;
  sfusion::AmConfig am_config(std::size_t vocab_size) const;
  sfusion::LmConfig lm_config(std::size_t vocab_size) const;
  sfusion::FeaturizerConfig featurizer() const;
  sfusion::TrainConfig am_train() const;
  sfusion::TrainConfig lm_train() const;
  sfusion::FusionConfig fusion() const;
  sfusion::MwerConfig mwer() const;
  sfusion::SynthCorpusConfig synth() const;

 private:
  ordered_json doc_;
  mutable std::map<std::string, std::uint64_t> used_;
};

// "inf" or a number.
double parse_delta(const ordered_json& v);

}  // namespace sfcli
