#include "sfusion/prune.h"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <unordered_map>

#include <json.hpp>

#include "sfusion/error.h"
#include "sfusion/fusion.h"

namespace sfusion {

namespace {

// Evaluates keep(line) on shards and emits kept lines in stream order.
template <typename Pred>
FilterResult filter_lines(std::span<const std::string> corpus, unsigned workers, Pred&& keep) {
  std::vector<char> flags(corpus.size(), 0);
  workers = std::max(1u, workers);
  std::size_t chunk = (corpus.size() + workers - 1) / std::max<std::size_t>(workers, 1);
  parallel_for(workers, workers, [&](std::size_t w) {
    std::size_t begin = std::min(corpus.size(), w * chunk);
    std::size_t end = std::min(corpus.size(), begin + chunk);
    for (std::size_t i = begin; i < end; ++i) flags[i] = keep(corpus[i]) ? 1 : 0;
  });
  FilterResult out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (flags[i]) {
      out.lines.push_back(corpus[i]);
    } else {
      ++out.dropped;
    }
  }
  return out;
}

}  // namespace

LogBase parse_log_base(std::string_view name) {
  if (name == "ln") return LogBase::kNatural;
  if (name == "log2") return LogBase::kTwo;
  if (name == "log10") return LogBase::kTen;
  throw ContractError("unknown log base '" + std::string(name) + "' (expected ln, log2, log10)");
}

std::string_view log_base_name(LogBase base) {
  switch (base) {
    case LogBase::kNatural: return "ln";
    case LogBase::kTwo: return "log2";
    case LogBase::kTen: return "log10";
  }
  return "ln";
}

std::uint64_t dedup_keep_count(std::uint64_t n, LogBase base) {
  if (n == 0) return 0;
  std::uint64_t floor_log = 0;
  switch (base) {
    case LogBase::kNatural:
      floor_log = static_cast<std::uint64_t>(std::floor(std::log(static_cast<double>(n))));
      break;
    case LogBase::kTwo:
      floor_log = static_cast<std::uint64_t>(std::bit_width(n) - 1);
      break;
    case LogBase::kTen:
      for (std::uint64_t v = n; v >= 10; v /= 10) ++floor_log;
      break;
  }
  return std::max<std::uint64_t>(1, floor_log);
}

WordSet read_word_set(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open word list '" + path + "'");
  WordSet words;
  std::string line;
  while (std::getline(in, line)) {
    for (auto& w : split_words(line)) words.insert(normalize_line(w));
  }
  return words;
}

FilterResult vocab_filter(std::span<const std::string> corpus, const WordSet& vocabulary,
                          unsigned workers) {
  return filter_lines(corpus, workers, [&vocabulary](const std::string& line) {
    for (const auto& w : split_words(line)) {
      if (!vocabulary.contains(w)) return false;
    }
    return true;
  });
}

FilterResult logn_dedup(std::span<const std::string> corpus, LogBase base, unsigned workers) {
  workers = std::max(1u, workers);
  // Count pass: per-shard tallies merged into one table.
  std::vector<std::unordered_map<std::string, std::uint64_t>> shards(workers);
  std::size_t chunk = (corpus.size() + workers - 1) / workers;
  parallel_for(workers, workers, [&](std::size_t w) {
    std::size_t begin = std::min(corpus.size(), w * chunk);
    std::size_t end = std::min(corpus.size(), begin + chunk);
    for (std::size_t i = begin; i < end; ++i) ++shards[w][normalize_line(corpus[i])];
  });
  std::unordered_map<std::string, std::uint64_t> counts = std::move(shards[0]);
  for (std::size_t w = 1; w < shards.size(); ++w) {
    for (auto& [k, c] : shards[w]) counts[k] += c;
  }
  // Emit pass: keep the first dedup_keep_count(n) copies.
  std::unordered_map<std::string, std::uint64_t> emitted;
  FilterResult out;
  for (const auto& line : corpus) {
    std::string key = normalize_line(line);
    std::uint64_t& seen = emitted[key];
    if (seen < dedup_keep_count(counts[key], base)) {
      ++seen;
      out.lines.push_back(line);
    } else {
      ++out.dropped;
    }
  }
  return out;
}

FilterResult rare_word_filter(std::span<const std::string> corpus, const CorpusStats& am_stats,
                              std::uint64_t threshold, unsigned workers) {
  if (threshold < 1) throw ContractError("rare_word_filter: threshold must be >= 1");
  return filter_lines(corpus, workers, [&](const std::string& line) {
    for (const auto& w : split_words(line)) {
      if (am_stats.count(w) < threshold) return true;
    }
    return false;
  });
}

FilterResult sample_to_target(std::span<const std::string> corpus, std::size_t target,
                              std::uint64_t seed) {
  FilterResult out;
  if (target >= corpus.size()) {
    out.lines.assign(corpus.begin(), corpus.end());
    return out;
  }
  std::vector<std::size_t> idx(corpus.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first `target` slots are a uniform sample.
  for (std::size_t i = 0; i < target; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(target);
  std::sort(idx.begin(), idx.end());
  out.lines.reserve(target);
  for (std::size_t i : idx) out.lines.push_back(corpus[i]);
  out.dropped = corpus.size() - target;
  return out;
}

PruneStage parse_prune_stage(std::string_view name) {
  if (name == "all") return PruneStage::kAll;
  if (name == "1") return PruneStage::kVocab;
  if (name == "2") return PruneStage::kDedup;
  if (name == "2*") return PruneStage::kRare;
  if (name == "3") return PruneStage::kSample;
  throw ContractError("unknown prune stage '" + std::string(name) + "' (expected all, 1, 2, 2*, 3)");
}

void PruneReport::write_json(std::ostream& os, bool include_timings) const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["log_base"] = log_base;
  auto& st = j["stages"] = nlohmann::ordered_json::array();
  for (const auto& s : stages) {
    nlohmann::ordered_json e{{"stage", s.name}, {"input", s.input}, {"output", s.output}};
    if (include_timings) e["seconds"] = s.seconds;
    st.push_back(std::move(e));
  }
  os << j.dump(2) << '\n';
}

PruneOutput prune_pipeline(std::span<const std::string> corpus, const PruneConfig& config) {
  PruneOutput out;
  out.report.seed = config.seed;
  out.report.log_base = std::string(log_base_name(config.log_base));
  Corpus current(corpus.begin(), corpus.end());

  auto run = [&](const char* name, auto&& stage_fn) {
    auto t0 = std::chrono::steady_clock::now();
    FilterResult r;
    try {
      r = stage_fn(current);
    } catch (const Error& e) {
      throw Error(std::string("prune stage ") + name + ": " + e.what());
    }
    auto t1 = std::chrono::steady_clock::now();
    out.report.stages.push_back({name, current.size(), r.lines.size(),
                                 std::chrono::duration<double>(t1 - t0).count()});
    current = std::move(r.lines);
  };
  auto wants = [&](PruneStage s) { return config.stage == PruneStage::kAll || config.stage == s; };

  if (wants(PruneStage::kVocab) && (config.vocabulary || config.stage == PruneStage::kVocab)) {
    run("1", [&](const Corpus& c) {
      if (!config.vocabulary) throw ContractError("no vocabulary supplied");
      return vocab_filter(c, *config.vocabulary, config.workers);
    });
  }
  if (wants(PruneStage::kDedup)) {
    run("2", [&](const Corpus& c) { return logn_dedup(c, config.log_base, config.workers); });
  }
  bool rare = config.stage == PruneStage::kRare || (config.stage == PruneStage::kAll && config.rare_filter);
  if (rare) {
    run("2*", [&](const Corpus& c) {
      if (!config.am_stats) throw ContractError("no AM-side stats supplied");
      return rare_word_filter(c, *config.am_stats, config.rare_threshold, config.workers);
    });
  }
  bool sample = config.stage == PruneStage::kSample ||
                (config.stage == PruneStage::kAll && config.target &&
                 !(rare && config.skip_sampling_after_rare));
  if (sample) {
    run("3", [&](const Corpus& c) {
      if (!config.target) throw ContractError("no target size supplied");
      return sample_to_target(c, *config.target, config.seed);
    });
  }
  out.lines = std::move(current);
  return out;
}

}  // namespace sfusion
