#include "sfusion/eval.h"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <ostream>

#include <json.hpp>

#include "sfusion/error.h"
#include "sfusion/log.h"

namespace sfusion {

EditCounts edit_distance_words(std::span<const std::string> hyp, std::span<const std::string> ref) {
  const std::size_t n = hyp.size();
  const std::size_t m = ref.size();
  // cost[i][j]: hyp[0:i] vs ref[0:j].
  std::vector<std::size_t> cost((n + 1) * (m + 1));
  auto at = [m](std::size_t i, std::size_t j) { return i * (m + 1) + j; };
  for (std::size_t i = 0; i <= n; ++i) cost[at(i, 0)] = i;
  for (std::size_t j = 0; j <= m; ++j) cost[at(0, j)] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      std::size_t sub = cost[at(i - 1, j - 1)] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      std::size_t ins = cost[at(i - 1, j)] + 1;
      std::size_t del = cost[at(i, j - 1)] + 1;
      cost[at(i, j)] = std::min({sub, ins, del});
    }
  }
  EditCounts out;
  out.total = cost[at(n, m)];
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 &&
        cost[at(i, j)] == cost[at(i - 1, j - 1)] + (hyp[i - 1] == ref[j - 1] ? 0 : 1)) {
      if (hyp[i - 1] != ref[j - 1]) ++out.substitutions;
      --i;
      --j;
    } else if (j > 0 && cost[at(i, j)] == cost[at(i, j - 1)] + 1) {
      ++out.deletions;
      --j;
    } else {
      ++out.insertions;
      --i;
    }
  }
  return out;
}

EditCounts edit_distance_words(std::string_view hyp, std::string_view ref) {
  auto h = split_words(hyp);
  auto r = split_words(ref);
  return edit_distance_words(h, r);
}

bool is_truncated(std::size_t hyp_words, std::size_t ref_words) {
  return 2 * hyp_words <= ref_words;
}

TruncationPartition truncation_partition(std::span<const HypRef> pairs) {
  TruncationPartition out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    std::size_t ref_words = split_words(pairs[i].ref).size();
    if (ref_words == 0) {
      warn("truncation: utterance '" + pairs[i].id + "' has an empty reference; excluded");
      out.excluded.push_back(i);
      continue;
    }
    std::size_t hyp_words = split_words(pairs[i].hyp).size();
    (is_truncated(hyp_words, ref_words) ? out.truncated : out.rest).push_back(i);
  }
  return out;
}

double EvalReport::trunc_contribution() const {
  return total_ref_words ? static_cast<double>(trunc_edits) / static_cast<double>(total_ref_words)
                         : 0.0;
}

void EvalReport::write_json(std::ostream& os) const {
  nlohmann::ordered_json j;
  j["wer"] = wer;
  j["trunc_wer"] = trunc_wer;
  j["trunc_frac"] = trunc_frac;
  j["total_edits"] = total_edits;
  j["total_ref_words"] = total_ref_words;
  j["trunc_edits"] = trunc_edits;
  j["trunc_ref_words"] = trunc_ref_words;
  j["excluded"] = excluded;
  auto& recs = j["utterances"] = nlohmann::ordered_json::array();
  for (const auto& r : records) {
    recs.push_back({{"utterance_id", r.id},
                    {"hyp", r.hyp},
                    {"ref", r.ref},
                    {"edits", r.edits},
                    {"ref_words", r.ref_words},
                    {"truncated", r.truncated}});
  }
  os << j.dump(2) << '\n';
}

EvalReport score_pairs(std::span<const HypRef> pairs) {
  EvalReport rep;
  TruncationPartition part = truncation_partition(pairs);
  std::vector<char> truncated(pairs.size(), 0);
  for (std::size_t i : part.truncated) truncated[i] = 1;
  std::vector<char> excluded(pairs.size(), 0);
  for (std::size_t i : part.excluded) excluded[i] = 1;
  rep.excluded = part.excluded.size();
  std::size_t scored = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (excluded[i]) continue;
    UtteranceRecord r;
    r.id = pairs[i].id;
    r.hyp = pairs[i].hyp;
    r.ref = pairs[i].ref;
    r.edits = edit_distance_words(pairs[i].hyp, pairs[i].ref).total;
    r.ref_words = split_words(pairs[i].ref).size();
    r.truncated = truncated[i] != 0;
    rep.total_edits += r.edits;
    rep.total_ref_words += r.ref_words;
    if (r.truncated) {
      rep.trunc_edits += r.edits;
      rep.trunc_ref_words += r.ref_words;
    }
    ++scored;
    rep.records.push_back(std::move(r));
  }
  if (rep.total_ref_words) {
    rep.wer = static_cast<double>(rep.total_edits) / static_cast<double>(rep.total_ref_words);
  }
  if (rep.trunc_ref_words) {
    rep.trunc_wer = static_cast<double>(rep.trunc_edits) / static_cast<double>(rep.trunc_ref_words);
  }
  if (scored) {
    rep.trunc_frac = static_cast<double>(part.truncated.size()) / static_cast<double>(scored);
  }
  return rep;
}

EvalReport evaluate(const AttentionAm& am, const LstmLm* lm, const CharVocab& vocab,
                    std::span<const Utterance> utterances, const FusionConfig& cfg,
                    unsigned workers) {
  auto results = decode_batch(am, lm, vocab, utterances, cfg, workers);
  std::vector<HypRef> pairs;
  pairs.reserve(results.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    pairs.push_back({utterances[i].id, results[i].best().text, utterances[i].transcript});
  }
  return score_pairs(pairs);
}

std::vector<std::string> build_lm_integration_wordlist(const CorpusStats& am_stats,
                                                       const CorpusStats& lm_stats,
                                                       std::uint64_t am_max,
                                                       std::uint64_t lm_min) {
  std::vector<std::string> out;
  for (const auto& [word, lm_count] : lm_stats.counts) {
    if (lm_count >= lm_min && am_stats.count(word) <= am_max) out.push_back(word);
  }
  // lm_min == 0 admits words absent from the LM side too.
  if (lm_min == 0) {
    for (const auto& [word, am_count] : am_stats.counts) {
      if (am_count <= am_max && !lm_stats.counts.contains(word)) out.push_back(word);
    }
    std::sort(out.begin(), out.end());
  }
  return out;
}

std::vector<SweepRow> sweep(const AttentionAm& am, const LstmLm* lm, const CharVocab& vocab,
                            std::span<const Utterance> utterances,
                            std::span<const SweepCell> grid, const FusionConfig& base,
                            unsigned workers) {
  if (grid.empty()) throw ContractError("sweep: empty grid");
  std::vector<SweepRow> rows;
  rows.reserve(grid.size());
  for (const auto& cell : grid) {
    FusionConfig cfg = base;
    cfg.beam_size = cell.beam_size;
    cfg.max_eos_logprob_delta = cell.delta;
    EvalReport rep;
    try {
      rep = evaluate(am, lm, vocab, utterances, cfg, workers);
    } catch (const Error& e) {
      throw Error("sweep cell (beam=" + std::to_string(cell.beam_size) +
                  ", delta=" + std::to_string(cell.delta) + "): " + e.what());
    }
    rows.push_back({cell.beam_size, cell.delta, rep.wer, rep.trunc_wer, rep.trunc_frac});
  }
  return rows;
}

void write_sweep_csv(std::ostream& os, std::span<const SweepRow> rows) {
  os << "beam,delta,wer,trunc_wer,trunc_frac\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", r.beam_size, r.delta, r.wer,
                  r.trunc_wer, r.trunc_frac);
    os << buf;
  }
}

double wer_range(std::span<const SweepRow> rows) {
  if (rows.empty()) return 0.0;
  auto [lo, hi] = std::minmax_element(rows.begin(), rows.end(),
                                      [](const SweepRow& a, const SweepRow& b) { return a.wer < b.wer; });
  return hi->wer - lo->wer;
}

}  // namespace sfusion
