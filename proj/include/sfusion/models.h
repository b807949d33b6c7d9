#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sfusion/autodiff.h"
#include "sfusion/text.h"

namespace sfusion {

// T x d frame matrix.
using Features = ad::Tensor;

struct FeaturizerConfig {
  std::size_t dim = 16;
  std::uint64_t table_seed = 7;
};

// Deterministic text -> frames synthesizer standing in for audio. Frame t is
// the fixed embedding row of character t plus N(0, sigma^2) noise drawn from
// the per-utterance seed.
class Featurizer {
 public:
  Featurizer(const CharVocab& vocab, FeaturizerConfig config);

  const FeaturizerConfig& config() const { return config_; }
  const ad::Tensor& table() const { return table_; }
  Features featurize(std::string_view transcript, double noise_sigma,
                     std::uint64_t seed) const;

 private:
  const CharVocab* vocab_;
  FeaturizerConfig config_;
  ad::Tensor table_;
};

struct Utterance {
  std::string id;
  std::string transcript;
  Features features;
  // Featurization inputs, kept so a set can be stored without its frames.
  double noise_sigma = 0.0;
  std::uint64_t feature_seed = 0;
};

// One LSTM layer with an optional output projection. Gate order in the
// fused weight columns is input, forget, cell, output.
struct LstmLayer {
  std::size_t input_dim = 0;
  std::size_t hidden = 0;
  std::size_t projection = 0;  // 0 = none
  ad::Tensor wx;               // input_dim x 4H
  ad::Tensor wh;               // out_dim x 4H
  ad::Tensor bias;             // 1 x 4H
  ad::Tensor proj;             // H x P when projection > 0

  std::size_t out_dim() const { return projection ? projection : hidden; }
};

struct LstmState {
  std::vector<double> out;   // recurrent output (projected when present)
  std::vector<double> cell;
};

// Parameter handles of one layer inside a graph.
struct BoundLstm {
  ad::Var wx, wh, bias, proj;
};

struct LmConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 16;
  std::size_t hidden = 64;
  std::size_t projection = 32;
  std::size_t layers = 1;
};

using LmState = std::vector<LstmState>;

struct LmStepOutput {
  std::vector<double> logprobs;
  LmState next;
};

// Character LSTM language model.
class LstmLm {
 public:
  LstmLm(const LmConfig& config, std::uint64_t seed);

  const LmConfig& config() const { return config_; }

  LmState init() const;
  // Distribution of the token that follows `token`.
  LmStepOutput step(const LmState& state, TokenId token) const;
  // ids start with SOS; the sum covers every id after the first.
  double sequence_logprob(std::span<const TokenId> ids) const;

  // Autodiff route of sequence_logprob over parameters bound in g.
  struct Bound {
    ad::Var embed, out_w, out_b;
    std::vector<BoundLstm> layers;
  };
  Bound bind(ad::Graph& g);
  ad::Var sequence_logprob(ad::Graph& g, const Bound& b, std::span<const TokenId> ids) const;

  std::vector<ad::Tensor*> parameters();
  std::vector<const ad::Tensor*> parameters() const;

 private:
  LmConfig config_;
  ad::Tensor embed_;  // V x E
  std::vector<LstmLayer> layers_;
  ad::Tensor out_w_;  // out_dim x V
  ad::Tensor out_b_;  // 1 x V
};

struct AmConfig {
  std::size_t vocab_size = 0;
  std::size_t feature_dim = 16;
  std::size_t embed_dim = 16;
  std::size_t encoder_hidden = 64;
  std::size_t decoder_hidden = 64;
  std::size_t attention_dim = 32;
  // Featurizer table the model was trained against.
  std::uint64_t feature_table_seed = 7;
};

struct EncoderOutput {
  ad::Tensor states;  // T x He
  ad::Tensor keys;    // T x A
  std::size_t frames() const { return states.rows(); }
};

struct AmDecoderState {
  LstmState lstm;
  std::vector<double> context;  // previous attention context, He
};

struct AmStepOutput {
  std::vector<double> logprobs;
  std::vector<double> attention;  // one weight per encoder frame
  AmDecoderState next;
};

// Attention encoder-decoder: LSTM encoder over frames, LSTM decoder fed
// with the previous token and previous context, dot-product attention
// between projected decoder state and projected encoder states.
class AttentionAm {
 public:
  AttentionAm(const AmConfig& config, std::uint64_t seed);

  const AmConfig& config() const { return config_; }

  EncoderOutput encode(const Features& features) const;
  AmDecoderState init_state() const;
  AmStepOutput decode_step(const AmDecoderState& state, TokenId prev,
                           const EncoderOutput& enc) const;
  // Teacher-forced log P(ids[1:] | features); ids start with SOS.
  double sequence_logprob(const EncoderOutput& enc, std::span<const TokenId> ids) const;

  struct Bound {
    ad::Var embed, out_w, out_b, key_w, query_w;
    BoundLstm encoder, decoder;
  };
  struct GraphEncoding {
    ad::Var states;
    ad::Var keys;
  };
  Bound bind(ad::Graph& g);
  GraphEncoding encode(ad::Graph& g, const Bound& b, const Features& features) const;
  ad::Var sequence_logprob(ad::Graph& g, const Bound& b, const GraphEncoding& enc,
                           std::span<const TokenId> ids) const;

  std::vector<ad::Tensor*> parameters();
  std::vector<const ad::Tensor*> parameters() const;

 private:
  AmConfig config_;
  ad::Tensor embed_;    // V x E
  LstmLayer encoder_;   // d -> He
  LstmLayer decoder_;   // E + He -> Hd
  ad::Tensor key_w_;    // He x A
  ad::Tensor query_w_;  // Hd x A
  ad::Tensor out_w_;    // (Hd + He) x V
  ad::Tensor out_b_;    // 1 x V
};

// Copies parameter values between models of identical shape.
void copy_parameters(std::span<const ad::Tensor* const> from, std::span<ad::Tensor* const> to);

}  // namespace sfusion
