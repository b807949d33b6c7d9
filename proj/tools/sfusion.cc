// Command-line entry point. Each subcommand reads its inputs from files,
// runs one library operation and writes machine-readable outputs. Settings
// resolve as defaults < --config file < flags; the resolved config and the
// named sub-seeds are logged to stderr as one JSON line.

#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <variant>

#include <CLI11.hpp>
#include <json.hpp>

#include "config.h"
#include "sfusion/checkpoint.h"
#include "sfusion/dataset.h"
#include "sfusion/error.h"
#include "sfusion/eval.h"
#include "sfusion/fusion.h"
#include "sfusion/g2p.h"
#include "sfusion/mwer.h"
#include "sfusion/prune.h"
#include "sfusion/text.h"
#include "sfusion/training.h"
#include "sfusion/version.h"

namespace fs = std::filesystem;
using namespace sfusion;
using sfcli::ExperimentConfig;
using sfcli::ordered_json;

namespace {

// Outputs are written under a temporary name and renamed on success, so a
// failed run leaves no partial files behind.
class Outputs {
 public:
  ~Outputs() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& [final_path, tmp] : files_) fs::remove(tmp, ec);
  }

  std::string add(const std::string& final_path) {
    std::string tmp = final_path + ".partial";
    files_.emplace_back(final_path, tmp);
    return tmp;
  }

  void commit() {
    for (const auto& [final_path, tmp] : files_) fs::rename(tmp, final_path);
    committed_ = true;
  }

 private:
  std::vector<std::pair<std::string, std::string>> files_;
  bool committed_ = false;
};

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  return os;
}

void close_out(std::ofstream& os, const std::string& path) {
  os.close();
  if (!os) throw IoError("write failed: " + path);
}

// Flag values that override config keys. Storage is a deque so option
// pointers stay valid.
class Overrides {
 public:
  template <typename T>
  void add(CLI::App* app, const std::string& flag, const std::string& pointer,
           const std::string& help) {
    auto& slot = std::get<std::optional<T>>(slots_.emplace_back(std::optional<T>{}));
    app->add_option(flag, slot, help + " [" + pointer + "]");
    apply_.push_back({&slots_.back(), pointer, flag});
  }

  void apply(ExperimentConfig& cfg) const {
    for (const auto& a : apply_) {
      std::visit(
          [&](const auto& opt) {
            if (opt) cfg.set(a.pointer, to_json(*opt, a.pointer), a.flag);
          },
          *a.slot);
    }
  }

 private:
  using Slot = std::variant<std::optional<double>, std::optional<std::uint64_t>,
                            std::optional<std::string>, std::optional<bool>,
                            std::optional<std::vector<double>>>;
  struct Apply {
    const Slot* slot;
    std::string pointer;
    std::string flag;
  };

  static ordered_json to_json(double v, const std::string&) {
    if (std::isinf(v) && v > 0) return "inf";
    return v;
  }
  static ordered_json to_json(const std::vector<double>& v, const std::string& p) {
    ordered_json a = ordered_json::array();
    for (double x : v) a.push_back(to_json(x, p));
    return a;
  }
  template <typename T>
  static ordered_json to_json(const T& v, const std::string&) {
    return ordered_json(v);
  }

  std::deque<Slot> slots_;
  std::vector<Apply> apply_;
};

struct Context {
  ExperimentConfig cfg;
  unsigned workers = 1;
};

void log_resolved(const std::string& command, const Context& ctx) {
  ordered_json j;
  j["command"] = command;
  j["version"] = kArtifactVersion;
  j["workers"] = ctx.workers;
  j["config"] = ctx.cfg.json();
  ordered_json seeds = ordered_json::object();
  for (const auto& [name, s] : ctx.cfg.used_seeds()) seeds[name] = s;
  j["derived_seeds"] = seeds;
  std::cerr << "resolved: " << j.dump() << '\n';
}

std::vector<Utterance> load_utterances(const Context& ctx, const CharVocab& vocab,
                                       const std::string& key, const std::string& flag) {
  FeaturizerConfig fc;
  auto utts = read_utterance_set_file(ctx.cfg.required_path(key, flag), vocab, &fc);
  FeaturizerConfig want = ctx.cfg.featurizer();
  if (fc.dim != want.dim || fc.table_seed != want.table_seed) {
    throw ContractError("utterance set featurizer (dim " + std::to_string(fc.dim) + ", table seed " +
                        std::to_string(fc.table_seed) + ") does not match /models/am");
  }
  return utts;
}

// Training utterances: an utterance set, or a corpus featurized here.
std::vector<Utterance> training_utterances(const Context& ctx, const CharVocab& vocab) {
  if (ctx.cfg.path("utterances")) return load_utterances(ctx, vocab, "utterances", "--utterances");
  auto lines = read_corpus_file(ctx.cfg.required_path("corpus", "--utterances or --corpus"));
  Featurizer f(vocab, ctx.cfg.featurizer());
  double sigma = ctx.cfg.json()["models"]["am"]["noise_sigma"].get<double>();
  return make_utterances(lines, f, sigma, ctx.cfg.sub_seed("features"), "train");
}

AttentionAm load_am(const Context& ctx, const CharVocab& vocab) {
  return load_am_checkpoint(ctx.cfg.required_path("am", "--am"), vocab.hash());
}

std::optional<LstmLm> load_lm(const Context& ctx, const CharVocab& vocab) {
  if (auto p = ctx.cfg.path("lm")) return load_lm_checkpoint(*p, vocab.hash());
  return std::nullopt;
}

// ---------------------------------------------------------------- commands

int cmd_synth_corpus(Context& ctx) {
  const auto& v = ctx.cfg.json()["vocab"];
  std::size_t n = v["words"].get<std::size_t>();
  std::size_t max_len = v["max_word_len"].get<std::size_t>();
  std::vector<std::string> words;
  for (const auto& w : make_word_list(max_len ? 20 * n : n, ctx.cfg.sub_seed("words"))) {
    if (max_len && w.size() > max_len) continue;
    words.push_back(w);
    if (words.size() == n) break;
  }
  auto corpus = synth_corpus(words, ctx.cfg.synth());
  log_resolved("synth-corpus", ctx);

  Outputs outs;
  std::string out = ctx.cfg.required_path("out", "--out");
  write_corpus_file(outs.add(out), corpus);
  if (auto wp = ctx.cfg.path("words_out")) write_corpus_file(outs.add(*wp), words);
  outs.commit();
  std::cout << "wrote " << corpus.size() << " sentences over " << words.size() << " words to "
            << out << '\n';
  return 0;
}

int cmd_stats(Context& ctx) {
  auto lines = read_corpus_file(ctx.cfg.required_path("corpus", "--corpus"));
  log_resolved("stats", ctx);
  CorpusStats st = count_unigrams(lines, ctx.workers);
  Outputs outs;
  std::string out = ctx.cfg.required_path("out", "--out");
  st.write_file(outs.add(out));
  outs.commit();
  std::cout << st.total_sentences << " sentences, " << st.total_words << " words, "
            << st.counts.size() << " types\n";
  return 0;
}

int cmd_prune(Context& ctx) {
  const auto& p = ctx.cfg.json()["prune"];
  PruneConfig pc;
  if (auto v = ctx.cfg.path("vocab")) pc.vocabulary = read_word_set(*v);
  if (auto s = ctx.cfg.path("stats")) pc.am_stats = CorpusStats::read_file(*s);
  pc.rare_filter = p["rare_filter"].get<bool>() || pc.am_stats.has_value();
  pc.rare_threshold = p["rare_threshold"].get<std::uint64_t>();
  if (!p["target"].is_null()) pc.target = p["target"].get<std::size_t>();
  pc.skip_sampling_after_rare = p["skip_sampling_after_rare"].get<bool>();
  pc.seed = ctx.cfg.sub_seed("sampling");
  pc.log_base = parse_log_base(p["log_base"].get<std::string>());
  pc.stage = parse_prune_stage(p["stage"].get<std::string>());
  pc.workers = ctx.workers;
  auto corpus = read_corpus_file(ctx.cfg.required_path("corpus", "--corpus"));
  log_resolved("prune", ctx);

  PruneOutput res = prune_pipeline(corpus, pc);
  Outputs outs;
  std::string out = ctx.cfg.required_path("out", "--out");
  write_corpus_file(outs.add(out), res.lines);
  if (auto r = ctx.cfg.path("report")) {
    std::string tmp = outs.add(*r);
    auto os = open_out(tmp);
    res.report.write_json(os);
    close_out(os, tmp);
  }
  outs.commit();
  for (const auto& s : res.report.stages) {
    std::cout << s.name << ": " << s.input << " -> " << s.output << '\n';
  }
  return 0;
}

void write_train_log(const std::string& path, const TrainLog& log) {
  auto os = open_out(path);
  os << "epoch,loss\n";
  for (std::size_t i = 0; i < log.epoch_loss.size(); ++i) os << i + 1 << ',' << log.epoch_loss[i] << '\n';
  close_out(os, path);
}

int cmd_train_lm(Context& ctx) {
  CharVocab vocab = ctx.cfg.vocab();
  auto lines = read_corpus_file(ctx.cfg.required_path("corpus", "--corpus"));
  LstmLm lm(ctx.cfg.lm_config(vocab.size()), ctx.cfg.sub_seed("lm-init"));
  TrainConfig tc = ctx.cfg.lm_train();
  log_resolved("train-lm", ctx);
  TrainLog log = ce_pretrain_lm(lm, vocab, lines, tc);
  Outputs outs;
  std::string out = ctx.cfg.required_path("out", "--out");
  save_checkpoint(lm, vocab.hash(), outs.add(out));
  if (auto lp = ctx.cfg.path("log")) write_train_log(outs.add(*lp), log);
  outs.commit();
  std::cout << "lm cross-entropy " << log.initial_loss << " -> " << log.final_loss
            << " nats/char over " << lines.size() << " sentences\n";
  return 0;
}

int cmd_train_am(Context& ctx) {
  CharVocab vocab = ctx.cfg.vocab();
  auto utts = training_utterances(ctx, vocab);
  AttentionAm am(ctx.cfg.am_config(vocab.size()), ctx.cfg.sub_seed("am-init"));
  TrainConfig tc = ctx.cfg.am_train();
  log_resolved("train-am", ctx);
  TrainLog log = ce_pretrain_am(am, vocab, utts, tc);
  Outputs outs;
  std::string out = ctx.cfg.required_path("out", "--out");
  save_checkpoint(am, vocab.hash(), outs.add(out));
  if (auto lp = ctx.cfg.path("log")) write_train_log(outs.add(*lp), log);
  outs.commit();
  std::cout << "am cross-entropy " << log.initial_loss << " -> " << log.final_loss
            << " nats/char over " << utts.size() << " utterances\n";
  return 0;
}

int cmd_mwer(Context& ctx) {
  CharVocab vocab = ctx.cfg.vocab();
  AttentionAm am = load_am(ctx, vocab);
  auto lm = load_lm(ctx, vocab);
  auto utts = training_utterances(ctx, vocab);
  MwerConfig mc = ctx.cfg.mwer();
  log_resolved("mwer-finetune", ctx);
  MwerLog log = mwer_finetune(am, lm ? &*lm : nullptr, vocab, utts, mc);

  Outputs outs;
  std::string out = ctx.cfg.required_path("out", "--out");
  save_checkpoint(am, vocab.hash(), outs.add(out));
  if (auto lp = ctx.cfg.path("log")) {
    std::string tmp = outs.add(*lp);
    auto os = open_out(tmp);
    os << "step,loss,beam_wer\n";
    char buf[96];
    for (const auto& s : log.steps) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", s.step, s.loss, s.beam_wer);
      os << buf;
    }
    close_out(os, tmp);
  }
  outs.commit();
  double mean = 0.0;
  for (const auto& s : log.steps) mean += s.beam_wer;
  if (!log.steps.empty()) mean /= static_cast<double>(log.steps.size());
  std::cout << log.steps.size() << " steps, mean beam WER " << mean << ", degenerate steps "
            << log.degenerate_steps << '\n';
  return 0;
}

ordered_json decode_record(const Utterance& u, const BeamResult& r) {
  ordered_json j;
  j["utterance_id"] = u.id;
  j["best"] = r.best().text;
  auto& nb = j["n_best"] = ordered_json::array();
  for (std::size_t i = 0; i < r.hyps.size(); ++i) {
    const auto& h = r.hyps[i];
    nb.push_back({{"text", h.text},
                  {"am_lp", h.am_logprob},
                  {"lm_lp", h.lm_logprob},
                  {"coverage", h.coverage},
                  {"fused", r.scores[i]}});
  }
  j["truncated"] = r.diagnostics.truncated.value_or(false);
  return j;
}

int cmd_decode(Context& ctx) {
  CharVocab vocab = ctx.cfg.vocab();
  AttentionAm am = load_am(ctx, vocab);
  auto lm = load_lm(ctx, vocab);
  auto utts = load_utterances(ctx, vocab, "utterances", "--utterances");
  FusionConfig fc = ctx.cfg.fusion();
  log_resolved("decode", ctx);
  auto results = decode_batch(am, lm ? &*lm : nullptr, vocab, utts, fc, ctx.workers);
  Outputs outs;
  std::string out = ctx.cfg.required_path("out", "--out");
  std::string tmp = outs.add(out);
  auto os = open_out(tmp);
  std::size_t truncated = 0;
  for (std::size_t i = 0; i < utts.size(); ++i) {
    os << decode_record(utts[i], results[i]).dump() << '\n';
    truncated += results[i].diagnostics.truncated.value_or(false);
  }
  close_out(os, tmp);
  outs.commit();
  std::cout << "decoded " << utts.size() << " utterances, " << truncated << " truncated\n";
  return 0;
}

int cmd_evaluate(Context& ctx) {
  CharVocab vocab = ctx.cfg.vocab();
  auto utts = load_utterances(ctx, vocab, "utterances", "--utterances");
  EvalReport rep;
  if (auto dp = ctx.cfg.path("decoded")) {
    // Score an existing decode output against the set's references.
    std::ifstream in(*dp);
    if (!in) throw IoError("cannot open " + *dp);
    std::map<std::string, std::string> hyp;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty()) continue;
      try {
        auto j = ordered_json::parse(line);
        hyp[j.at("utterance_id").get<std::string>()] = j.at("best").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(*dp + ":" + std::to_string(n) + ": " + e.what());
      }
    }
    std::vector<HypRef> pairs;
    for (const auto& u : utts) {
      auto it = hyp.find(u.id);
      if (it == hyp.end()) throw ContractError("no decode record for utterance " + u.id);
      pairs.push_back({u.id, it->second, u.transcript});
    }
    log_resolved("evaluate", ctx);
    rep = score_pairs(pairs);
  } else {
    AttentionAm am = load_am(ctx, vocab);
    auto lm = load_lm(ctx, vocab);
    FusionConfig fc = ctx.cfg.fusion();
    log_resolved("evaluate", ctx);
    rep = evaluate(am, lm ? &*lm : nullptr, vocab, utts, fc, ctx.workers);
  }
  Outputs outs;
  if (auto out = ctx.cfg.path("out")) {
    std::string tmp = outs.add(*out);
    auto os = open_out(tmp);
    rep.write_json(os);
    close_out(os, tmp);
  }
  outs.commit();
  std::cout << "WER " << rep.wer << " (" << rep.total_edits << "/" << rep.total_ref_words
            << "), truncated fraction " << rep.trunc_frac << ", truncated WER " << rep.trunc_wer
            << '\n';
  return 0;
}

int cmd_build_testset(Context& ctx) {
  CharVocab vocab = ctx.cfg.vocab();
  const auto& e = ctx.cfg.json()["eval"];
  auto corpus = read_corpus_file(ctx.cfg.required_path("corpus", "--corpus"));
  EvalSetConfig ec;
  ec.selector = parse_selector(e["selector"].get<std::string>());
  ec.n = e["n"].get<std::size_t>();
  ec.seed = ctx.cfg.sub_seed("eval-set");
  ec.noise_sigma = e["noise_sigma"].get<double>();
  ec.featurizer = ctx.cfg.featurizer();
  std::optional<Lexicon> lex;
  std::optional<G2PMap> g2p;
  if (ec.selector == EvalSelector::kLmIntegration) {
    if (auto wl = ctx.cfg.path("wordlist")) {
      ec.wordlist = read_corpus_file(*wl);
    } else {
      auto am_stats = CorpusStats::read_file(ctx.cfg.required_path("stats", "--wordlist or --stats"));
      auto lm_stats = CorpusStats::read_file(ctx.cfg.required_path("lm_stats", "--lm-stats"));
      ec.wordlist = build_lm_integration_wordlist(am_stats, lm_stats, e["am_max"].get<std::uint64_t>(),
                                                  e["lm_min"].get<std::uint64_t>());
    }
  } else if (ec.selector == EvalSelector::kSurprisingPron) {
    lex = Lexicon::read_file(ctx.cfg.required_path("lexicon", "--lexicon"));
    g2p = G2PMap::read_file(ctx.cfg.required_path("g2p", "--g2p"));
    ec.lexicon = &*lex;
    ec.g2p = &*g2p;
  }
  log_resolved("build-testset", ctx);
  auto utts = build_eval_set(corpus, vocab, ec);

  Outputs outs;
  std::string out = ctx.cfg.required_path("out", "--out");
  write_utterance_set_file(outs.add(out), utts, ec.featurizer);
  if (auto wo = ctx.cfg.path("wordlist_out")) write_corpus_file(outs.add(*wo), ec.wordlist);
  outs.commit();
  std::cout << "selected " << utts.size() << " utterances";
  if (ec.selector == EvalSelector::kLmIntegration) std::cout << " over " << ec.wordlist.size() << " list words";
  std::cout << '\n';
  return 0;
}

int cmd_sweep(Context& ctx) {
  CharVocab vocab = ctx.cfg.vocab();
  AttentionAm am = load_am(ctx, vocab);
  auto lm = load_lm(ctx, vocab);
  auto utts = load_utterances(ctx, vocab, "utterances", "--utterances");
  const auto& e = ctx.cfg.json()["eval"];
  std::vector<SweepCell> grid;
  for (const auto& b : e["beams"]) {
    double bv = b.get<double>();
    if (bv < 1 || bv != std::floor(bv)) throw ContractError("sweep: beam sizes must be positive integers");
    for (const auto& d : e["deltas"]) grid.push_back({static_cast<std::size_t>(bv), sfcli::parse_delta(d)});
  }
  FusionConfig base = ctx.cfg.fusion();
  log_resolved("sweep", ctx);
  auto rows = sweep(am, lm ? &*lm : nullptr, vocab, utts, grid, base, ctx.workers);
  Outputs outs;
  std::string out = ctx.cfg.required_path("out", "--out");
  std::string tmp = outs.add(out);
  auto os = open_out(tmp);
  write_sweep_csv(os, rows);
  close_out(os, tmp);
  outs.commit();
  for (const auto& r : rows) {
    std::printf("beam %zu delta %g: WER %.4f, truncated %.3f\n", r.beam_size, r.delta, r.wer,
                r.trunc_frac);
  }
  std::printf("WER range %.4f\n", wer_range(rows));
  return 0;
}

// Flags shared by the decoding commands.
void fusion_flags(CLI::App* app, Overrides& ov) {
  ov.add<double>(app, "--alpha", "/fusion/alpha", "LM weight");
  ov.add<double>(app, "--beta", "/fusion/beta", "coverage weight");
  ov.add<double>(app, "--tau", "/fusion/tau", "coverage attention threshold");
  ov.add<std::uint64_t>(app, "--beam", "/fusion/beam_size", "beam size");
  ov.add<double>(app, "--eos-delta", "/fusion/max_eos_logprob_delta", "EOS threshold (inf allowed)");
  ov.add<std::uint64_t>(app, "--max-steps", "/fusion/max_steps", "decode step limit, 0 = 2T+10");
  ov.add<std::uint64_t>(app, "--n-best", "/fusion/n_best", "hypotheses returned, 0 = beam size");
}

void model_flags(CLI::App* app, Overrides& ov, bool lm_only = false) {
  if (!lm_only) ov.add<std::string>(app, "--am", "/paths/am", "AM checkpoint");
  ov.add<std::string>(app, "--lm", "/paths/lm", "LM checkpoint");
}

void am_dim_flags(CLI::App* app, Overrides& ov) {
  ov.add<std::uint64_t>(app, "--feature-dim", "/models/am/feature_dim", "feature dimension");
  ov.add<std::uint64_t>(app, "--encoder-hidden", "/models/am/encoder_hidden", "encoder LSTM size");
  ov.add<std::uint64_t>(app, "--decoder-hidden", "/models/am/decoder_hidden", "decoder LSTM size");
  ov.add<std::uint64_t>(app, "--attention-dim", "/models/am/attention_dim", "attention size");
  ov.add<double>(app, "--noise-sigma", "/models/am/noise_sigma", "feature noise for --corpus input");
}

void emit_error(const std::string& type, const std::string& message) {
  ordered_json j;
  j["error"] = {{"type", type}, {"message", message}};
  std::cerr << j.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shallow-fusion speech recognition toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version",
                       std::string("sfusion ") + kArtifactVersion + " (checkpoint format " +
                           std::to_string(kCheckpointVersion) + ")");
  std::string config_path;
  std::optional<std::uint64_t> seed;
  unsigned workers = 1;
  app.add_option("--config", config_path, "JSON experiment config");
  app.add_option("--seed", seed, "top-level seed [/seeds/seed]");
  app.add_option("--workers", workers, "worker threads")->check(CLI::Range(1u, 256u));

  Overrides ov;
  std::map<CLI::App*, std::function<int(Context&)>> run;

  auto* synth = app.add_subcommand("synth-corpus", "Zipfian synthetic corpus");
  ov.add<std::string>(synth, "--out", "/paths/out", "corpus output");
  ov.add<std::string>(synth, "--words-out", "/paths/words_out", "word inventory output");
  ov.add<std::uint64_t>(synth, "--words", "/vocab/words", "inventory size");
  ov.add<std::uint64_t>(synth, "--max-word-len", "/vocab/max_word_len", "longest word, 0 = any");
  ov.add<std::uint64_t>(synth, "--sentences", "/vocab/sentences", "sentence count");
  ov.add<double>(synth, "--zipf", "/vocab/zipf_exponent", "Zipf exponent");
  ov.add<std::uint64_t>(synth, "--min-words", "/vocab/min_words", "shortest sentence");
  ov.add<std::uint64_t>(synth, "--max-words", "/vocab/max_words", "longest sentence");
  run[synth] = cmd_synth_corpus;

  auto* stats = app.add_subcommand("stats", "unigram counts as TSV");
  ov.add<std::string>(stats, "--corpus", "/paths/corpus", "input corpus");
  ov.add<std::string>(stats, "--out", "/paths/out", "TSV output");
  run[stats] = cmd_stats;

  auto* prune = app.add_subcommand("prune", "vocab filter, log-n dedup, rare-word filter, sampling");
  ov.add<std::string>(prune, "--corpus", "/paths/corpus", "input corpus");
  ov.add<std::string>(prune, "--out", "/paths/out", "pruned corpus");
  ov.add<std::string>(prune, "--report", "/paths/report", "JSON stage report");
  ov.add<std::string>(prune, "--vocab", "/paths/vocab", "word list for the vocab filter");
  ov.add<std::string>(prune, "--stats", "/paths/stats", "AM word counts; enables the rare filter");
  ov.add<std::uint64_t>(prune, "--rare-threshold", "/prune/rare_threshold", "rare if AM count below");
  ov.add<std::uint64_t>(prune, "--target", "/prune/target", "sentences to sample");
  ov.add<std::string>(prune, "--log-base", "/prune/log_base", "ln | log2 | log10");
  ov.add<std::string>(prune, "--stage", "/prune/stage", "all | 1 | 2 | 2* | 3");
  ov.add<bool>(prune, "--skip-sampling-after-rare", "/prune/skip_sampling_after_rare",
               "keep every rare-filter survivor");
  run[prune] = cmd_prune;

  auto* tlm = app.add_subcommand("train-lm", "cross-entropy LM training");
  ov.add<std::string>(tlm, "--corpus", "/paths/corpus", "training corpus");
  ov.add<std::string>(tlm, "--out", "/paths/out", "checkpoint output");
  ov.add<std::string>(tlm, "--log", "/paths/log", "CSV epoch log");
  ov.add<std::uint64_t>(tlm, "--epochs", "/models/lm/epochs", "epochs");
  ov.add<double>(tlm, "--lr", "/models/lm/learning_rate", "Adam step size");
  ov.add<std::uint64_t>(tlm, "--hidden", "/models/lm/hidden", "LSTM size");
  ov.add<std::uint64_t>(tlm, "--projection", "/models/lm/projection", "projection size, 0 = none");
  ov.add<std::uint64_t>(tlm, "--layers", "/models/lm/layers", "LSTM layers");
  run[tlm] = cmd_train_lm;

  auto* tam = app.add_subcommand("train-am", "cross-entropy AM training");
  ov.add<std::string>(tam, "--utterances", "/paths/utterances", "utterance set");
  ov.add<std::string>(tam, "--corpus", "/paths/corpus", "transcripts to featurize instead");
  ov.add<std::string>(tam, "--out", "/paths/out", "checkpoint output");
  ov.add<std::string>(tam, "--log", "/paths/log", "CSV epoch log");
  ov.add<std::uint64_t>(tam, "--epochs", "/models/am/epochs", "epochs");
  ov.add<double>(tam, "--lr", "/models/am/learning_rate", "Adam step size");
  am_dim_flags(tam, ov);
  run[tam] = cmd_train_am;

  auto* mw = app.add_subcommand("mwer-finetune", "MWER fine-tuning of the AM");
  model_flags(mw, ov);
  ov.add<std::string>(mw, "--utterances", "/paths/utterances", "utterance set");
  ov.add<std::string>(mw, "--corpus", "/paths/corpus", "transcripts to featurize instead");
  ov.add<std::string>(mw, "--out", "/paths/out", "checkpoint output");
  ov.add<std::string>(mw, "--log", "/paths/log", "CSV log step,loss,beam_wer");
  ov.add<std::string>(mw, "--mode", "/mwer/mode", "fused | am_only");
  ov.add<bool>(mw, "--relative", "/mwer/relative", "subtract the beam-mean edits");
  ov.add<double>(mw, "--lr", "/mwer/learning_rate", "SGD step size");
  ov.add<std::uint64_t>(mw, "--steps", "/mwer/steps", "utterance steps");
  ov.add<double>(mw, "--clip-norm", "/mwer/clip_norm", "gradient norm clip");
  ov.add<double>(mw, "--noise-sigma", "/models/am/noise_sigma", "feature noise for --corpus input");
  fusion_flags(mw, ov);
  run[mw] = cmd_mwer;

  auto* dec = app.add_subcommand("decode", "fused beam search to JSON lines");
  model_flags(dec, ov);
  ov.add<std::string>(dec, "--utterances", "/paths/utterances", "utterance set");
  ov.add<std::string>(dec, "--out", "/paths/out", "JSON-lines output");
  fusion_flags(dec, ov);
  run[dec] = cmd_decode;

  auto* ev = app.add_subcommand("evaluate", "WER and truncation report");
  model_flags(ev, ov);
  ov.add<std::string>(ev, "--utterances", "/paths/utterances", "utterance set with references");
  ov.add<std::string>(ev, "--decoded", "/paths/decoded", "score this decode output instead");
  ov.add<std::string>(ev, "--out", "/paths/out", "JSON report");
  fusion_flags(ev, ov);
  run[ev] = cmd_evaluate;

  auto* bt = app.add_subcommand("build-testset", "select and featurize an eval set");
  ov.add<std::string>(bt, "--corpus", "/paths/corpus", "candidate sentences");
  ov.add<std::string>(bt, "--out", "/paths/out", "utterance set output");
  ov.add<std::string>(bt, "--selector", "/eval/selector", "lm_integration | surprising_pron | random");
  ov.add<std::uint64_t>(bt, "--n", "/eval/n", "utterances to select");
  ov.add<double>(bt, "--noise-sigma", "/eval/noise_sigma", "feature noise");
  ov.add<std::string>(bt, "--wordlist", "/paths/wordlist", "tail word list");
  ov.add<std::string>(bt, "--wordlist-out", "/paths/wordlist_out", "write the word list used");
  ov.add<std::string>(bt, "--stats", "/paths/stats", "AM word counts");
  ov.add<std::string>(bt, "--lm-stats", "/paths/lm_stats", "LM word counts");
  ov.add<std::uint64_t>(bt, "--am-max", "/eval/am_max", "tail: AM count at most");
  ov.add<std::uint64_t>(bt, "--lm-min", "/eval/lm_min", "tail: LM count at least");
  ov.add<std::string>(bt, "--lexicon", "/paths/lexicon", "lexicon TSV");
  ov.add<std::string>(bt, "--g2p", "/paths/g2p", "G2P map TSV");
  ov.add<std::uint64_t>(bt, "--feature-dim", "/models/am/feature_dim", "feature dimension");
  run[bt] = cmd_build_testset;

  auto* sw = app.add_subcommand("sweep", "WER over a beam x delta grid, as CSV");
  model_flags(sw, ov);
  ov.add<std::string>(sw, "--utterances", "/paths/utterances", "utterance set");
  ov.add<std::string>(sw, "--out", "/paths/out", "CSV output");
  ov.add<std::vector<double>>(sw, "--beams", "/eval/beams", "beam sizes");
  ov.add<std::vector<double>>(sw, "--deltas", "/eval/deltas", "EOS thresholds");
  fusion_flags(sw, ov);
  run[sw] = cmd_sweep;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    emit_error("UsageError", e.what());
    return 2;
  }

  try {
    Context ctx;
    ctx.workers = workers;
    if (!config_path.empty()) ctx.cfg.merge_file(config_path);
    if (seed) ctx.cfg.set("/seeds/seed", *seed, "--seed");
    ov.apply(ctx.cfg);
    for (auto& [sub, fn] : run) {
      if (sub->parsed()) return fn(ctx);
    }
    return 2;
  } catch (const ParseError& e) {
    emit_error("ParseError", e.what());
  } catch (const IoError& e) {
    emit_error("IoError", e.what());
  } catch (const ContractError& e) {
    emit_error("ContractError", e.what());
  } catch (const NumericError& e) {
    emit_error("NumericError", e.what());
  } catch (const DimensionError& e) {
    emit_error("DimensionError", e.what());
  } catch (const Error& e) {
    emit_error("Error", e.what());
  } catch (const fs::filesystem_error& e) {
    emit_error("IoError", e.what());
  } catch (const std::exception& e) {
    emit_error("InternalError", e.what());
  }
  return 1;
}
