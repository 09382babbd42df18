#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "w2st/ops.hpp"
#include "w2st/tensor.hpp"
#include "w2st/tokenizer.hpp"

namespace w2st {

struct ModelConfig {
  int d_model = 64;
  int n_heads = 2;
  int n_layers_enc = 2;
  int n_layers_dec = 2;
  int d_ff = 128;
  int max_len = 64;
  int vocab_size = 0;

  int d_k() const { return d_model / n_heads; }
  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct NormParams {
  Tensor gain;
  Tensor bias;
};

struct AttentionParams {
  Tensor wq, wk, wv, wo;
};

struct FeedForwardParams {
  Tensor w1, b1, w2, b2;
};

struct EncoderLayerParams {
  NormParams norm1;
  AttentionParams self_attn;
  NormParams norm2;
  FeedForwardParams ffn;
};

struct DecoderLayerParams {
  NormParams norm1;
  AttentionParams self_attn;
  NormParams norm2;
  AttentionParams cross_attn;
  NormParams norm3;
  FeedForwardParams ffn;
};

using NamedTensor = std::pair<std::string, Tensor>;

/// Every learnable weight. The token embedding is shared by the encoder
/// input, the decoder input and the output projection.
struct ModelParams {
  Tensor embedding;  // [vocab_size x d_model]
  std::vector<EncoderLayerParams> encoder;
  NormParams encoder_norm;
  std::vector<DecoderLayerParams> decoder;
  NormParams decoder_norm;

  /// Glorot-uniform matrices, unit gains, zero biases.
  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

  /// All tensors in the fixed checkpoint order.
  std::vector<NamedTensor> named() const;
  std::vector<Tensor> tensors() const;
  ModelParams clone() const;
  void zero_grad();
  std::size_t parameter_count() const;
};

/// Throws if any tensor shape disagrees with cfg.
void check_params(const ModelParams& params, const ModelConfig& cfg);

struct EncoderStates {
  Tensor hidden;  // [n x d_model]
};

/// Attention weight matrices captured during a forward pass.
struct ForwardTrace {
  std::vector<Tensor> attention_weights;
};

/// softmax(q k^T / sqrt(d_k)) v, with disallowed mask entries excluded.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const AttentionMask* mask = nullptr, ForwardTrace* trace = nullptr);

/// Sinusoidal position signal, [n x d_model].
Tensor positional_encoding(std::size_t n, std::size_t d_model);

EncoderStates encode(const ModelParams& params, const ModelConfig& cfg,
                     const TokenSeq& instruction, ForwardTrace* trace = nullptr);

/// Row t of the result holds logits for the token following prefix[t].
Tensor decode_logits(const ModelParams& params, const ModelConfig& cfg, const EncoderStates& enc,
                     const TokenSeq& prefix, ForwardTrace* trace = nullptr);

/// Teacher-forced negative log-likelihood of `story` (which must end with
/// EOS) given `instruction`. The decoder reads BOS followed by every story
/// token but the last. PAD targets are ignored.
Tensor sequence_loss(const ModelParams& params, const ModelConfig& cfg,
                     const TokenSeq& instruction, const TokenSeq& story,
                     Reduction reduction = Reduction::kMean);

/// Decoder input for teacher forcing: BOS + story[0..m-2].
TokenSeq teacher_input(const TokenSeq& story);

/// Number of non-PAD targets in a story.
std::size_t target_count(const TokenSeq& story);

}  // namespace w2st
