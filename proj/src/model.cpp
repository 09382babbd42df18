#include "w2st/model.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "w2st/rng.hpp"

namespace w2st {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw std::invalid_argument(std::string("model config: ") + name + " must be positive");
  };
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(n_layers_enc, "n_layers_enc");
  positive(n_layers_dec, "n_layers_dec");
  positive(d_ff, "d_ff");
  positive(vocab_size, "vocab_size");
  if (max_len < 2) throw std::invalid_argument("model config: max_len must be at least 2");
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("model config: d_model " + std::to_string(d_model) +
                                " not divisible by n_heads " + std::to_string(n_heads));
  }
}

namespace {

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

Tensor glorot(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<float> values(fan_in * fan_out);
  for (float& v : values) v = static_cast<float>(rng.uniform(-s, s));
  return Tensor::from({fan_in, fan_out}, std::move(values), true);
}

NormParams make_norm(std::size_t d) {
  return {Tensor::full({d}, 1.0f, true), Tensor::zeros({d}, true)};
}

AttentionParams make_attention(Rng& rng, std::size_t d) {
  return {glorot(rng, d, d), glorot(rng, d, d), glorot(rng, d, d), glorot(rng, d, d)};
}

FeedForwardParams make_ffn(Rng& rng, std::size_t d, std::size_t ff) {
  FeedForwardParams p;
  p.w1 = glorot(rng, d, ff);
  p.b1 = Tensor::zeros({ff}, true);
  p.w2 = glorot(rng, ff, d);
  p.b2 = Tensor::zeros({d}, true);
  return p;
}

void add_norm(std::vector<NamedTensor>& out, const std::string& prefix, const NormParams& n) {
  out.emplace_back(prefix + ".gain", n.gain);
  out.emplace_back(prefix + ".bias", n.bias);
}

void add_attention(std::vector<NamedTensor>& out, const std::string& prefix,
                   const AttentionParams& a) {
  out.emplace_back(prefix + ".wq", a.wq);
  out.emplace_back(prefix + ".wk", a.wk);
  out.emplace_back(prefix + ".wv", a.wv);
  out.emplace_back(prefix + ".wo", a.wo);
}

void add_ffn(std::vector<NamedTensor>& out, const std::string& prefix,
             const FeedForwardParams& f) {
  out.emplace_back(prefix + ".w1", f.w1);
  out.emplace_back(prefix + ".b1", f.b1);
  out.emplace_back(prefix + ".w2", f.w2);
  out.emplace_back(prefix + ".b2", f.b2);
}

Tensor feed_forward(const FeedForwardParams& p, const Tensor& x) {
  Tensor h = relu(add_bias(matmul(x, p.w1), p.b1));
  return add_bias(matmul(h, p.w2), p.b2);
}

Tensor norm(const NormParams& p, const Tensor& x) { return layer_norm(x, p.gain, p.bias); }

Tensor multi_head(const AttentionParams& p, const Tensor& xq, const Tensor& xkv, int n_heads,
                  const AttentionMask* mask, ForwardTrace* trace) {
  const Tensor q = matmul(xq, p.wq);
  const Tensor k = matmul(xkv, p.wk);
  const Tensor v = matmul(xkv, p.wv);
  const std::size_t dk = q.dim(1) / sz(n_heads);
  std::vector<Tensor> heads;
  heads.reserve(sz(n_heads));
  for (std::size_t h = 0; h < sz(n_heads); ++h) {
    heads.push_back(attention(slice_cols(q, h * dk, dk), slice_cols(k, h * dk, dk),
                              slice_cols(v, h * dk, dk), mask, trace));
  }
  return matmul(heads.size() == 1 ? heads[0] : concat_cols(heads), p.wo);
}

std::vector<int> strip_pad(const std::vector<int>& ids) {
  std::size_t n = ids.size();
  while (n > 0 && ids[n - 1] == token::kPad) --n;
  return {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n)};
}

Tensor embed(const ModelParams& params, const ModelConfig& cfg, const std::vector<int>& ids) {
  return add(embedding(params.embedding, ids),
             positional_encoding(ids.size(), sz(cfg.d_model)));
}

void check_length(std::size_t n, const ModelConfig& cfg, const char* what) {
  if (n == 0 || n > sz(cfg.max_len)) {
    throw std::length_error(std::string(what) + " length " + std::to_string(n) +
                            " outside [1, " + std::to_string(cfg.max_len) + "]");
  }
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t d = sz(cfg.d_model), ff = sz(cfg.d_ff);
  ModelParams p;
  p.embedding = glorot(rng, sz(cfg.vocab_size), d);
  for (int i = 0; i < cfg.n_layers_enc; ++i) {
    EncoderLayerParams layer;
    layer.norm1 = make_norm(d);
    layer.self_attn = make_attention(rng, d);
    layer.norm2 = make_norm(d);
    layer.ffn = make_ffn(rng, d, ff);
    p.encoder.push_back(std::move(layer));
  }
  p.encoder_norm = make_norm(d);
  for (int i = 0; i < cfg.n_layers_dec; ++i) {
    DecoderLayerParams layer;
    layer.norm1 = make_norm(d);
    layer.self_attn = make_attention(rng, d);
    layer.norm2 = make_norm(d);
    layer.cross_attn = make_attention(rng, d);
    layer.norm3 = make_norm(d);
    layer.ffn = make_ffn(rng, d, ff);
    p.decoder.push_back(std::move(layer));
  }
  p.decoder_norm = make_norm(d);
  return p;
}

std::vector<NamedTensor> ModelParams::named() const {
  std::vector<NamedTensor> out;
  out.emplace_back("embedding", embedding);
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    const std::string pre = "encoder." + std::to_string(i);
    add_norm(out, pre + ".norm1", encoder[i].norm1);
    add_attention(out, pre + ".self_attn", encoder[i].self_attn);
    add_norm(out, pre + ".norm2", encoder[i].norm2);
    add_ffn(out, pre + ".ffn", encoder[i].ffn);
  }
  add_norm(out, "encoder_norm", encoder_norm);
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    const std::string pre = "decoder." + std::to_string(i);
    add_norm(out, pre + ".norm1", decoder[i].norm1);
    add_attention(out, pre + ".self_attn", decoder[i].self_attn);
    add_norm(out, pre + ".norm2", decoder[i].norm2);
    add_attention(out, pre + ".cross_attn", decoder[i].cross_attn);
    add_norm(out, pre + ".norm3", decoder[i].norm3);
    add_ffn(out, pre + ".ffn", decoder[i].ffn);
  }
  add_norm(out, "decoder_norm", decoder_norm);
  return out;
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

ModelParams ModelParams::clone() const {
  auto cp_norm = [](const NormParams& n) { return NormParams{n.gain.clone(), n.bias.clone()}; };
  auto cp_attn = [](const AttentionParams& a) {
    return AttentionParams{a.wq.clone(), a.wk.clone(), a.wv.clone(), a.wo.clone()};
  };
  auto cp_ffn = [](const FeedForwardParams& f) {
    return FeedForwardParams{f.w1.clone(), f.b1.clone(), f.w2.clone(), f.b2.clone()};
  };
  ModelParams p;
  p.embedding = embedding.clone();
  for (const auto& l : encoder) {
    p.encoder.push_back({cp_norm(l.norm1), cp_attn(l.self_attn), cp_norm(l.norm2), cp_ffn(l.ffn)});
  }
  p.encoder_norm = cp_norm(encoder_norm);
  for (const auto& l : decoder) {
    p.decoder.push_back({cp_norm(l.norm1), cp_attn(l.self_attn), cp_norm(l.norm2),
                         cp_attn(l.cross_attn), cp_norm(l.norm3), cp_ffn(l.ffn)});
  }
  p.decoder_norm = cp_norm(decoder_norm);
  return p;
}

void ModelParams::zero_grad() {
  for (auto& t : tensors()) t.zero_grad();
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += t.numel();
  return n;
}

void check_params(const ModelParams& params, const ModelConfig& cfg) {
  cfg.validate();
  const ModelParams ref = [&] {
    // Shapes only; the values of this throwaway init are irrelevant.
    return ModelParams::init(cfg, 0);
  }();
  const auto want = ref.named();
  const auto have = params.named();
  if (want.size() != have.size()) {
    throw ShapeError("parameter count " + std::to_string(have.size()) + " does not match config (" +
                     std::to_string(want.size()) + ")");
  }
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i].second.shape() != have[i].second.shape()) {
      throw ShapeError("parameter " + want[i].first + " has shape " +
                       shape_str(have[i].second.shape()) + ", config needs " +
                       shape_str(want[i].second.shape()));
    }
  }
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask* mask,
                 ForwardTrace* trace) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) ||
      k.dim(0) != v.dim(0)) {
    throw ShapeError("attention: incompatible q " + shape_str(q.shape()) + ", k " +
                     shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  const float inv_sqrt_dk = 1.0f / std::sqrt(static_cast<float>(q.dim(1)));
  const Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt_dk);
  const Tensor weights = masked_softmax(
      scores, mask ? *mask : AttentionMask::all(q.dim(0), k.dim(0)));
  if (trace) trace->attention_weights.push_back(weights);
  return matmul(weights, v);
}

Tensor positional_encoding(std::size_t n, std::size_t d_model) {
  thread_local std::unordered_map<std::size_t, std::vector<float>> cache;
  auto& table = cache[d_model];
  const std::size_t have = table.size() / d_model;
  if (have < n) {
    table.resize(n * d_model);
    for (std::size_t pos = have; pos < n; ++pos) {
      for (std::size_t i = 0; i < d_model; i += 2) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d_model));
        table[pos * d_model + i] = static_cast<float>(std::sin(static_cast<double>(pos) * freq));
        if (i + 1 < d_model) {
          table[pos * d_model + i + 1] = static_cast<float>(std::cos(static_cast<double>(pos) * freq));
        }
      }
    }
  }
  return Tensor::from({n, d_model}, {table.begin(), table.begin() + static_cast<std::ptrdiff_t>(n * d_model)});
}

EncoderStates encode(const ModelParams& params, const ModelConfig& cfg,
                     const TokenSeq& instruction, ForwardTrace* trace) {
  const std::vector<int> ids = strip_pad(instruction.ids);
  check_length(ids.size(), cfg, "instruction");
  Tensor x = embed(params, cfg, ids);
  for (const auto& layer : params.encoder) {
    const Tensor h = norm(layer.norm1, x);
    x = add(x, multi_head(layer.self_attn, h, h, cfg.n_heads, nullptr, trace));
    x = add(x, feed_forward(layer.ffn, norm(layer.norm2, x)));
  }
  return {norm(params.encoder_norm, x)};
}

Tensor decode_logits(const ModelParams& params, const ModelConfig& cfg, const EncoderStates& enc,
                     const TokenSeq& prefix, ForwardTrace* trace) {
  check_length(prefix.size(), cfg, "decoder input");
  if (enc.hidden.rank() != 2 || enc.hidden.dim(1) != sz(cfg.d_model)) {
    throw ShapeError("decode_logits: encoder states " + shape_str(enc.hidden.shape()) +
                     " do not match d_model " + std::to_string(cfg.d_model));
  }
  const AttentionMask causal = AttentionMask::causal(prefix.size());
  Tensor x = embed(params, cfg, prefix.ids);
  for (const auto& layer : params.decoder) {
    const Tensor h = norm(layer.norm1, x);
    x = add(x, multi_head(layer.self_attn, h, h, cfg.n_heads, &causal, trace));
    x = add(x, multi_head(layer.cross_attn, norm(layer.norm2, x), enc.hidden, cfg.n_heads,
                          nullptr, trace));
    x = add(x, feed_forward(layer.ffn, norm(layer.norm3, x)));
  }
  return matmul(norm(params.decoder_norm, x), transpose(params.embedding));
}

TokenSeq teacher_input(const TokenSeq& story) {
  TokenSeq in;
  in.role = SeqRole::kStory;
  in.ids.push_back(token::kBos);
  in.ids.insert(in.ids.end(), story.ids.begin(), story.ids.end() - 1);
  return in;
}

std::size_t target_count(const TokenSeq& story) {
  std::size_t n = 0;
  for (int id : story.ids) n += id != token::kPad;
  return n;
}

Tensor sequence_loss(const ModelParams& params, const ModelConfig& cfg,
                     const TokenSeq& instruction, const TokenSeq& story, Reduction reduction) {
  TokenSeq target{strip_pad(story.ids), SeqRole::kStory};
  if (target.empty()) throw std::invalid_argument("sequence_loss: empty story");
  if (target.ids.back() != token::kEos) {
    throw std::invalid_argument("sequence_loss: story must end with EOS");
  }
  const EncoderStates enc = encode(params, cfg, instruction);
  const Tensor logits = decode_logits(params, cfg, enc, teacher_input(target));
  return cross_entropy(logits, target.ids, token::kPad, reduction);
}

}  // namespace w2st
