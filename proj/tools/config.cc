#include "config.h"

#include <cmath>
#include <fstream>
#include <limits>

#include "sfusion/dataset.h"
#include "sfusion/error.h"

namespace sfcli {

using sfusion::ContractError;
using sfusion::ParseError;

namespace {

ordered_json make_defaults() {
  ordered_json d;
  d["vocab"] = {{"chars", "abcdefghijklmnopqrstuvwxyz"},
                // Synthetic language for synth-corpus.
                {"words", 150},
                {"max_word_len", 0},
                {"zipf_exponent", 1.0},
                {"sentences", 20000},
                {"min_words", 2},
                {"max_words", 5}};
  d["models"] = {{"am",
                  {{"feature_dim", 16},
                   {"embed_dim", 16},
                   {"encoder_hidden", 64},
                   {"decoder_hidden", 64},
                   {"attention_dim", 32},
                   {"feature_table_seed", 7},
                   {"noise_sigma", 0.3},
                   {"learning_rate", 0.01},
                   {"epochs", 10},
                   {"max_updates", 0},
                   {"clip_norm", 5.0}}},
                 {"lm",
                  {{"embed_dim", 16},
                   {"hidden", 64},
                   {"projection", 32},
                   {"layers", 1},
                   {"learning_rate", 0.003},
                   {"epochs", 2},
                   {"max_updates", 0},
                   {"clip_norm", 5.0}}}};
  d["fusion"] = {{"alpha", 0.0},       {"beta", 0.0},  {"tau", 0.5},
                 {"beam_size", 4},     {"max_eos_logprob_delta", "inf"},
                 {"max_steps", 0},     {"n_best", 0}};
  d["mwer"] = {{"mode", "fused"},
               {"relative", true},
               {"learning_rate", 0.01},
               {"steps", 100},
               {"clip_norm", 5.0}};
  d["prune"] = {{"log_base", "ln"},
                {"stage", "all"},
                {"rare_filter", false},
                {"rare_threshold", 5},
                {"target", nullptr},
                {"skip_sampling_after_rare", false}};
  d["eval"] = {{"selector", "random"},
               {"n", 100},
               {"noise_sigma", 0.3},
               {"am_max", 5},
               {"lm_min", 150},
               {"beams", {2, 4, 8}},
               {"deltas", {0.05, 0.5, 10.0}}};
  d["seeds"] = {{"seed", 1}};
  ordered_json paths;
  for (const char* k : {"corpus", "out", "words_out", "vocab", "stats", "lm_stats", "am", "lm",
                        "utterances", "decoded", "report", "log", "wordlist", "wordlist_out",
                        "lexicon", "g2p"}) {
    paths[k] = nullptr;
  }
  d["paths"] = paths;
  return d;
}

bool is_delta_key(const std::string& where) {
  return where == "/fusion/max_eos_logprob_delta";
}

void check_type(const ordered_json& def, const ordered_json& v, const std::string& where) {
  auto bad = [&](const char* want) {
    throw ParseError("config: " + where + " must be " + want + ", got " + v.dump());
  };
  if (is_delta_key(where)) {
    if (!(v.is_number() || (v.is_string() && v.get<std::string>() == "inf"))) bad("a number or \"inf\"");
    return;
  }
  if (def.is_null()) {
    if (where.rfind("/paths/", 0) == 0) {
      if (!(v.is_null() || v.is_string())) bad("a string or null");
    } else if (!(v.is_null() || v.is_number_unsigned())) {
      bad("a non-negative integer or null");
    }
  } else if (def.is_boolean()) {
    if (!v.is_boolean()) bad("a boolean");
  } else if (def.is_number_unsigned() || def.is_number_integer()) {
    if (!v.is_number_unsigned()) bad("a non-negative integer");
  } else if (def.is_number_float()) {
    if (!v.is_number()) bad("a number");
  } else if (def.is_string()) {
    if (!v.is_string()) bad("a string");
  } else if (def.is_array()) {
    if (!v.is_array()) bad("an array");
    bool inf_ok = where == "/eval/deltas";
    for (const auto& e : v) {
      bool inf = inf_ok && e.is_string() && e.get<std::string>() == "inf";
      if (!e.is_number() && !inf) bad(inf_ok ? "an array of numbers or \"inf\"" : "an array of numbers");
    }
  }
}

void merge_into(ordered_json& dst, const ordered_json& def, const ordered_json& src,
                const std::string& where) {
  if (!src.is_object()) throw ParseError("config: " + (where.empty() ? "document" : where) + " must be an object");
  for (const auto& [key, value] : src.items()) {
    std::string sub = where + "/" + key;
    if (!def.contains(key)) throw ParseError("config: unknown key " + sub);
    if (def[key].is_object()) {
      merge_into(dst[key], def[key], value, sub);
    } else {
      check_type(def[key], value, sub);
      dst[key] = value;
    }
  }
}

std::size_t size_at(const ordered_json& j, const char* k) { return j.at(k).get<std::size_t>(); }

}  // namespace

const ordered_json& ExperimentConfig::defaults() {
  static const ordered_json d = make_defaults();
  return d;
}

ExperimentConfig::ExperimentConfig() : doc_(defaults()) {}

void ExperimentConfig::merge(const ordered_json& doc, const std::string& origin) {
  try {
    merge_into(doc_, defaults(), doc, "");
  } catch (const ParseError& e) {
    throw ParseError(origin + ": " + e.what());
  }
}

void ExperimentConfig::merge_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw sfusion::IoError("cannot open config file " + path);
  ordered_json doc;
  try {
    doc = ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  merge(doc, path);
}

void ExperimentConfig::set(const std::string& pointer, ordered_json value, const std::string& origin) {
  nlohmann::json_pointer<std::string> ptr(pointer);
  const ordered_json& def = defaults().at(ptr);
  try {
    check_type(def, value, pointer);
  } catch (const ParseError& e) {
    throw ParseError(origin + ": " + e.what());
  }
  doc_[ptr] = std::move(value);
}

std::uint64_t ExperimentConfig::seed() const { return doc_["seeds"]["seed"].get<std::uint64_t>(); }

std::uint64_t ExperimentConfig::sub_seed(const std::string& name) const {
  std::uint64_t s = sfusion::derive_seed(seed(), name);
  used_[name] = s;
  return s;
}

std::optional<std::string> ExperimentConfig::path(const std::string& key) const {
  const auto& v = doc_["paths"].at(key);
  if (v.is_null()) return std::nullopt;
  if (!v.is_string()) throw ContractError("config: /paths/" + key + " must be a string");
  return v.get<std::string>();
}

std::string ExperimentConfig::required_path(const std::string& key, const std::string& flag) const {
  auto p = path(key);
  if (!p || p->empty()) {
    throw ContractError("missing required input: pass " + flag + " or set /paths/" + key);
  }
  return *p;
}

sfusion::CharVocab ExperimentConfig::vocab() const {
  return sfusion::CharVocab(doc_["vocab"]["chars"].get<std::string>());
}

sfusion::AmConfig ExperimentConfig::am_config(std::size_t vocab_size) const {
  const auto& a = doc_["models"]["am"];
  sfusion::AmConfig c;
  c.vocab_size = vocab_size;
  c.feature_dim = size_at(a, "feature_dim");
  c.embed_dim = size_at(a, "embed_dim");
  c.encoder_hidden = size_at(a, "encoder_hidden");
  c.decoder_hidden = size_at(a, "decoder_hidden");
  c.attention_dim = size_at(a, "attention_dim");
  c.feature_table_seed = a["feature_table_seed"].get<std::uint64_t>();
  return c;
}

sfusion::LmConfig ExperimentConfig::lm_config(std::size_t vocab_size) const {
  const auto& l = doc_["models"]["lm"];
  return sfusion::LmConfig{vocab_size, size_at(l, "embed_dim"), size_at(l, "hidden"),
                           size_at(l, "projection"), size_at(l, "layers")};
}

sfusion::FeaturizerConfig ExperimentConfig::featurizer() const {
  const auto& a = doc_["models"]["am"];
  return {size_at(a, "feature_dim"), a["feature_table_seed"].get<std::uint64_t>()};
}

namespace {

sfusion::TrainConfig train_from(const ordered_json& j, std::uint64_t seed) {
  sfusion::TrainConfig t;
  t.learning_rate = j["learning_rate"].get<double>();
  t.epochs = size_at(j, "epochs");
  t.max_updates = size_at(j, "max_updates");
  t.clip_norm = j["clip_norm"].get<double>();
  t.seed = seed;
  return t;
}

}  // namespace

sfusion::TrainConfig ExperimentConfig::am_train() const {
  return train_from(doc_["models"]["am"], sub_seed("am-train"));
}

sfusion::TrainConfig ExperimentConfig::lm_train() const {
  return train_from(doc_["models"]["lm"], sub_seed("lm-train"));
}

double parse_delta(const ordered_json& v) {
  if (v.is_string()) return std::numeric_limits<double>::infinity();
  return v.get<double>();
}

sfusion::FusionConfig ExperimentConfig::fusion() const {
  const auto& f = doc_["fusion"];
  sfusion::FusionConfig c;
  c.alpha = f["alpha"].get<double>();
  c.beta = f["beta"].get<double>();
  c.tau = f["tau"].get<double>();
  c.beam_size = size_at(f, "beam_size");
  c.max_eos_logprob_delta = parse_delta(f["max_eos_logprob_delta"]);
  c.max_steps = size_at(f, "max_steps");
  c.n_best = size_at(f, "n_best");
  c.validate();
  return c;
}

sfusion::MwerConfig ExperimentConfig::mwer() const {
  const auto& m = doc_["mwer"];
  sfusion::MwerConfig c;
  std::string mode = m["mode"].get<std::string>();
  if (mode == "fused") {
    c.mode = sfusion::MwerMode::kFused;
  } else if (mode == "am_only") {
    c.mode = sfusion::MwerMode::kAmOnly;
  } else {
    throw ContractError("config: /mwer/mode must be fused or am_only, got " + mode);
  }
  c.fusion = fusion();
  c.relative = m["relative"].get<bool>();
  c.learning_rate = m["learning_rate"].get<double>();
  c.steps = size_at(m, "steps");
  c.clip_norm = m["clip_norm"].get<double>();
  c.seed = sub_seed("mwer");
  return c;
}

sfusion::SynthCorpusConfig ExperimentConfig::synth() const {
  const auto& v = doc_["vocab"];
  sfusion::SynthCorpusConfig c;
  c.zipf_exponent = v["zipf_exponent"].get<double>();
  c.n_sentences = size_at(v, "sentences");
  c.min_words = size_at(v, "min_words");
  c.max_words = size_at(v, "max_words");
  c.seed = sub_seed("corpus");
  return c;
}

}  // namespace sfcli
