#include "sfusion/models.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "sfusion/error.h"

namespace sfusion {

namespace {

void fill_uniform(ad::Tensor& t, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (double& v : t.values()) v = dist(rng);
}

LstmLayer make_lstm(std::size_t input_dim, std::size_t hidden, std::size_t projection,
                    std::mt19937_64& rng) {
  LstmLayer l;
  l.input_dim = input_dim;
  l.hidden = hidden;
  l.projection = projection;
  l.wx = ad::Tensor::matrix(input_dim, 4 * hidden);
  l.wh = ad::Tensor::matrix(l.out_dim(), 4 * hidden);
  l.bias = ad::Tensor::matrix(1, 4 * hidden);
  fill_uniform(l.wx, 1.0 / std::sqrt(static_cast<double>(input_dim)), rng);
  fill_uniform(l.wh, 1.0 / std::sqrt(static_cast<double>(l.out_dim())), rng);
  // Forget gate starts open.
  for (std::size_t j = hidden; j < 2 * hidden; ++j) l.bias[j] = 1.0;
  if (projection) {
    l.proj = ad::Tensor::matrix(hidden, projection);
    fill_uniform(l.proj, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
  }
  return l;
}

// out += x * W, with x a row of W.rows() values.
void row_times(std::span<const double> x, const ad::Tensor& w, std::span<double> out) {
  std::size_t n = w.cols();
  const double* wv = w.values().data();
  for (std::size_t p = 0; p < x.size(); ++p) {
    double s = x[p];
    if (s == 0.0) continue;
    const double* wr = wv + p * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += s * wr[j];
  }
}

double sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  double e = std::exp(v);
  return e / (1.0 + e);
}

void log_softmax_inplace(std::vector<double>& v) {
  double mx = *std::max_element(v.begin(), v.end());
  double z = 0.0;
  for (double x : v) z += std::exp(x - mx);
  double lz = mx + std::log(z);
  for (double& x : v) x -= lz;
}

LstmState lstm_zero(const LstmLayer& l) {
  return {std::vector<double>(l.out_dim(), 0.0), std::vector<double>(l.hidden, 0.0)};
}

LstmState lstm_step(const LstmLayer& l, std::span<const double> x, const LstmState& prev) {
  std::size_t h = l.hidden;
  std::vector<double> pre(l.bias.values().begin(), l.bias.values().end());
  row_times(x, l.wx, pre);
  row_times(prev.out, l.wh, pre);
  LstmState next;
  next.cell.resize(h);
  std::vector<double> hidden(h);
  for (std::size_t j = 0; j < h; ++j) {
    double i = sigmoid(pre[j]);
    double f = sigmoid(pre[h + j]);
    double g = std::tanh(pre[2 * h + j]);
    double o = sigmoid(pre[3 * h + j]);
    next.cell[j] = f * prev.cell[j] + i * g;
    hidden[j] = o * std::tanh(next.cell[j]);
  }
  if (l.projection) {
    next.out.assign(l.projection, 0.0);
    row_times(hidden, l.proj, next.out);
  } else {
    next.out = std::move(hidden);
  }
  return next;
}

struct GraphLstmState {
  ad::Var out;
  ad::Var cell;
};

BoundLstm bind_lstm(ad::Graph& g, LstmLayer& l) {
  BoundLstm b{g.param(l.wx), g.param(l.wh), g.param(l.bias), {}};
  if (l.projection) b.proj = g.param(l.proj);
  return b;
}

GraphLstmState graph_lstm_zero(ad::Graph& g, const LstmLayer& l) {
  return {g.constant(ad::Tensor::matrix(1, l.out_dim())),
          g.constant(ad::Tensor::matrix(1, l.hidden))};
}

GraphLstmState graph_lstm_step(ad::Graph& g, const LstmLayer& l, const BoundLstm& b,
                               ad::Var x, const GraphLstmState& prev) {
  std::size_t h = l.hidden;
  ad::Var pre = g.add(g.add(g.matmul(x, b.wx), g.matmul(prev.out, b.wh)), b.bias);
  ad::Var i = g.sigmoid(g.slice(pre, 1, 0, h));
  ad::Var f = g.sigmoid(g.slice(pre, 1, h, 2 * h));
  ad::Var c_in = g.tanh(g.slice(pre, 1, 2 * h, 3 * h));
  ad::Var o = g.sigmoid(g.slice(pre, 1, 3 * h, 4 * h));
  ad::Var cell = g.add(g.mul(f, prev.cell), g.mul(i, c_in));
  ad::Var hidden = g.mul(o, g.tanh(cell));
  ad::Var out = l.projection ? g.matmul(hidden, b.proj) : hidden;
  return {out, cell};
}

void append_lstm(std::vector<ad::Tensor*>& out, LstmLayer& l) {
  out.push_back(&l.wx);
  out.push_back(&l.wh);
  out.push_back(&l.bias);
  if (l.projection) out.push_back(&l.proj);
}

void check_token(TokenId t, std::size_t vocab_size) {
  if (t < 0 || static_cast<std::size_t>(t) >= vocab_size) {
    throw ContractError("token id " + std::to_string(t) + " outside vocabulary of size " +
                        std::to_string(vocab_size));
  }
}

}  // namespace

Featurizer::Featurizer(const CharVocab& vocab, FeaturizerConfig config)
    : vocab_(&vocab), config_(config), table_(ad::Tensor::matrix(vocab.size(), config.dim)) {
  if (config.dim == 0) throw ContractError("featurizer: dim must be positive");
  std::mt19937_64 rng(config.table_seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (double& v : table_.values()) v = dist(rng);
}

Features Featurizer::featurize(std::string_view transcript, double noise_sigma,
                               std::uint64_t seed) const {
  if (noise_sigma < 0) throw ContractError("featurize: noise_sigma must be >= 0");
  std::size_t d = config_.dim;
  Features out = ad::Tensor::matrix(transcript.size(), d);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t t = 0; t < transcript.size(); ++t) {
    if (!vocab_->contains(transcript[t])) {
      throw ContractError(std::string("featurize: out-of-vocabulary character '") +
                          transcript[t] + "' at position " + std::to_string(t));
    }
    TokenId id = vocab_->id(transcript[t]);
    for (std::size_t j = 0; j < d; ++j) {
      double n = noise(rng);
      out.at(t, j) = table_.at(id, j) + noise_sigma * n;
    }
  }
  return out;
}

LstmLm::LstmLm(const LmConfig& config, std::uint64_t seed) : config_(config) {
  if (config.vocab_size < 3) throw ContractError("lm: vocabulary too small");
  if (config.layers < 1) throw ContractError("lm: need at least one layer");
  if (config.projection && config.projection >= config.hidden) {
    throw ContractError("lm: projection must be smaller than the recurrent layer");
  }
  std::mt19937_64 rng(seed);
  embed_ = ad::Tensor::matrix(config.vocab_size, config.embed_dim);
  fill_uniform(embed_, 0.5, rng);
  std::size_t in = config.embed_dim;
  for (std::size_t l = 0; l < config.layers; ++l) {
    layers_.push_back(make_lstm(in, config.hidden, config.projection, rng));
    in = layers_.back().out_dim();
  }
  out_w_ = ad::Tensor::matrix(in, config.vocab_size);
  fill_uniform(out_w_, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  out_b_ = ad::Tensor::matrix(1, config.vocab_size);
}

LmState LstmLm::init() const {
  LmState s;
  for (const auto& l : layers_) s.push_back(lstm_zero(l));
  return s;
}

LmStepOutput LstmLm::step(const LmState& state, TokenId token) const {
  check_token(token, config_.vocab_size);
  LmStepOutput out;
  std::size_t e = config_.embed_dim;
  std::vector<double> x(embed_.values().begin() + token * e,
                        embed_.values().begin() + (token + 1) * e);
  out.next.reserve(layers_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    out.next.push_back(lstm_step(layers_[l], x, state[l]));
    x = out.next.back().out;
  }
  out.logprobs.assign(out_b_.values().begin(), out_b_.values().end());
  row_times(x, out_w_, out.logprobs);
  log_softmax_inplace(out.logprobs);
  return out;
}

double LstmLm::sequence_logprob(std::span<const TokenId> ids) const {
  LmState state = init();
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
    LmStepOutput o = step(state, ids[t]);
    check_token(ids[t + 1], config_.vocab_size);
    total += o.logprobs[ids[t + 1]];
    state = std::move(o.next);
  }
  return total;
}

LstmLm::Bound LstmLm::bind(ad::Graph& g) {
  Bound b{g.param(embed_), g.param(out_w_), g.param(out_b_), {}};
  for (auto& l : layers_) b.layers.push_back(bind_lstm(g, l));
  return b;
}

ad::Var LstmLm::sequence_logprob(ad::Graph& g, const Bound& b,
                                 std::span<const TokenId> ids) const {
  if (ids.size() < 2) throw ContractError("lm: sequence needs at least two tokens");
  for (TokenId t : ids) check_token(t, config_.vocab_size);
  std::size_t steps = ids.size() - 1;
  ad::Var inputs = g.embed_lookup(b.embed, ids.first(steps));
  std::vector<GraphLstmState> states;
  for (const auto& l : layers_) states.push_back(graph_lstm_zero(g, l));
  std::vector<ad::Var> picks;
  picks.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    ad::Var x = g.slice(inputs, 0, t, t + 1);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      states[l] = graph_lstm_step(g, layers_[l], b.layers[l], x, states[l]);
      x = states[l].out;
    }
    ad::Var lp = g.log_softmax(g.add(g.matmul(x, b.out_w), b.out_b));
    std::size_t y = static_cast<std::size_t>(ids[t + 1]);
    picks.push_back(g.slice(lp, 1, y, y + 1));
  }
  return g.sum(g.concat(picks, 1));
}

std::vector<ad::Tensor*> LstmLm::parameters() {
  std::vector<ad::Tensor*> out{&embed_};
  for (auto& l : layers_) append_lstm(out, l);
  out.push_back(&out_w_);
  out.push_back(&out_b_);
  return out;
}

std::vector<const ad::Tensor*> LstmLm::parameters() const {
  auto ps = const_cast<LstmLm*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

AttentionAm::AttentionAm(const AmConfig& config, std::uint64_t seed) : config_(config) {
  if (config.vocab_size < 3) throw ContractError("am: vocabulary too small");
  std::mt19937_64 rng(seed);
  embed_ = ad::Tensor::matrix(config.vocab_size, config.embed_dim);
  fill_uniform(embed_, 0.5, rng);
  encoder_ = make_lstm(config.feature_dim, config.encoder_hidden, 0, rng);
  decoder_ = make_lstm(config.embed_dim + config.encoder_hidden, config.decoder_hidden, 0, rng);
  key_w_ = ad::Tensor::matrix(config.encoder_hidden, config.attention_dim);
  query_w_ = ad::Tensor::matrix(config.decoder_hidden, config.attention_dim);
  fill_uniform(key_w_, 1.0 / std::sqrt(static_cast<double>(config.encoder_hidden)), rng);
  fill_uniform(query_w_, 1.0 / std::sqrt(static_cast<double>(config.decoder_hidden)), rng);
  std::size_t joint = config.decoder_hidden + config.encoder_hidden;
  out_w_ = ad::Tensor::matrix(joint, config.vocab_size);
  fill_uniform(out_w_, 1.0 / std::sqrt(static_cast<double>(joint)), rng);
  out_b_ = ad::Tensor::matrix(1, config.vocab_size);
}

EncoderOutput AttentionAm::encode(const Features& features) const {
  std::size_t frames = features.rows();
  if (features.size() == 0 || frames == 0) throw ContractError("am: empty feature sequence");
  if (features.cols() != config_.feature_dim) {
    throw DimensionError("am: feature dim " + std::to_string(features.cols()) +
                         " does not match model dim " + std::to_string(config_.feature_dim));
  }
  EncoderOutput enc{ad::Tensor::matrix(frames, config_.encoder_hidden),
                    ad::Tensor::matrix(frames, config_.attention_dim)};
  LstmState s = lstm_zero(encoder_);
  std::size_t d = config_.feature_dim;
  std::size_t he = config_.encoder_hidden;
  std::size_t a = config_.attention_dim;
  for (std::size_t t = 0; t < frames; ++t) {
    s = lstm_step(encoder_, features.values().subspan(t * d, d), s);
    std::copy(s.out.begin(), s.out.end(), enc.states.values().begin() + t * he);
    row_times(s.out, key_w_, enc.keys.values().subspan(t * a, a));
  }
  return enc;
}

AmDecoderState AttentionAm::init_state() const {
  return {lstm_zero(decoder_), std::vector<double>(config_.encoder_hidden, 0.0)};
}

AmStepOutput AttentionAm::decode_step(const AmDecoderState& state, TokenId prev,
                                      const EncoderOutput& enc) const {
  check_token(prev, config_.vocab_size);
  std::size_t e = config_.embed_dim;
  std::size_t he = config_.encoder_hidden;
  std::size_t a = config_.attention_dim;
  std::size_t frames = enc.frames();

  std::vector<double> x(e + he);
  std::copy_n(embed_.values().begin() + prev * e, e, x.begin());
  std::copy(state.context.begin(), state.context.end(), x.begin() + e);

  AmStepOutput out;
  out.next.lstm = lstm_step(decoder_, x, state.lstm);
  const std::vector<double>& h = out.next.lstm.out;

  std::vector<double> query(a, 0.0);
  row_times(h, query_w_, query);
  out.attention.resize(frames);
  for (std::size_t j = 0; j < frames; ++j) {
    double s = 0.0;
    for (std::size_t p = 0; p < a; ++p) s += query[p] * enc.keys[j * a + p];
    out.attention[j] = s;
  }
  double mx = *std::max_element(out.attention.begin(), out.attention.end());
  double z = 0.0;
  for (double& w : out.attention) z += std::exp(w - mx);
  for (double& w : out.attention) w = std::exp(w - mx) / z;

  out.next.context.assign(he, 0.0);
  for (std::size_t j = 0; j < frames; ++j) {
    double w = out.attention[j];
    for (std::size_t p = 0; p < he; ++p) out.next.context[p] += w * enc.states[j * he + p];
  }

  std::vector<double> joint(h.begin(), h.end());
  joint.insert(joint.end(), out.next.context.begin(), out.next.context.end());
  out.logprobs.assign(out_b_.values().begin(), out_b_.values().end());
  row_times(joint, out_w_, out.logprobs);
  log_softmax_inplace(out.logprobs);
  return out;
}

double AttentionAm::sequence_logprob(const EncoderOutput& enc,
                                     std::span<const TokenId> ids) const {
  AmDecoderState s = init_state();
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
    AmStepOutput o = decode_step(s, ids[t], enc);
    check_token(ids[t + 1], config_.vocab_size);
    total += o.logprobs[ids[t + 1]];
    s = std::move(o.next);
  }
  return total;
}

AttentionAm::Bound AttentionAm::bind(ad::Graph& g) {
  Bound b;
  b.embed = g.param(embed_);
  b.out_w = g.param(out_w_);
  b.out_b = g.param(out_b_);
  b.key_w = g.param(key_w_);
  b.query_w = g.param(query_w_);
  b.encoder = bind_lstm(g, encoder_);
  b.decoder = bind_lstm(g, decoder_);
  return b;
}

AttentionAm::GraphEncoding AttentionAm::encode(ad::Graph& g, const Bound& b,
                                               const Features& features) const {
  std::size_t frames = features.rows();
  if (features.size() == 0 || frames == 0) throw ContractError("am: empty feature sequence");
  if (features.cols() != config_.feature_dim) {
    throw DimensionError("am: feature dim mismatch");
  }
  ad::Var x = g.constant(features);
  GraphLstmState s = graph_lstm_zero(g, encoder_);
  std::vector<ad::Var> rows;
  rows.reserve(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    s = graph_lstm_step(g, encoder_, b.encoder, g.slice(x, 0, t, t + 1), s);
    rows.push_back(s.out);
  }
  ad::Var states = g.concat(rows, 0);
  return {states, g.matmul(states, b.key_w)};
}

ad::Var AttentionAm::sequence_logprob(ad::Graph& g, const Bound& b, const GraphEncoding& enc,
                                      std::span<const TokenId> ids) const {
  if (ids.size() < 2) throw ContractError("am: sequence needs at least two tokens");
  for (TokenId t : ids) check_token(t, config_.vocab_size);
  std::size_t steps = ids.size() - 1;
  ad::Var inputs = g.embed_lookup(b.embed, ids.first(steps));
  GraphLstmState s = graph_lstm_zero(g, decoder_);
  ad::Var context = g.constant(ad::Tensor::matrix(1, config_.encoder_hidden));
  std::vector<ad::Var> picks;
  picks.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    ad::Var parts[] = {g.slice(inputs, 0, t, t + 1), context};
    s = graph_lstm_step(g, decoder_, b.decoder, g.concat(parts, 1), s);
    ad::Var query = g.matmul(s.out, b.query_w);
    ad::Var attention = g.softmax(g.matmul(query, enc.keys, true));
    context = g.matmul(attention, enc.states);
    ad::Var joint_parts[] = {s.out, context};
    ad::Var logits = g.add(g.matmul(g.concat(joint_parts, 1), b.out_w), b.out_b);
    ad::Var lp = g.log_softmax(logits);
    std::size_t y = static_cast<std::size_t>(ids[t + 1]);
    picks.push_back(g.slice(lp, 1, y, y + 1));
  }
  return g.sum(g.concat(picks, 1));
}

std::vector<ad::Tensor*> AttentionAm::parameters() {
  std::vector<ad::Tensor*> out{&embed_};
  append_lstm(out, encoder_);
  append_lstm(out, decoder_);
  out.push_back(&key_w_);
  out.push_back(&query_w_);
  out.push_back(&out_w_);
  out.push_back(&out_b_);
  return out;
}

std::vector<const ad::Tensor*> AttentionAm::parameters() const {
  auto ps = const_cast<AttentionAm*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

void copy_parameters(std::span<const ad::Tensor* const> from, std::span<ad::Tensor* const> to) {
  if (from.size() != to.size()) throw DimensionError("copy_parameters: parameter count differs");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i]->shape() != to[i]->shape()) {
      throw DimensionError("copy_parameters: shape differs at parameter " + std::to_string(i));
    }
    std::copy(from[i]->values().begin(), from[i]->values().end(), to[i]->values().begin());
  }
}

}  // namespace sfusion
