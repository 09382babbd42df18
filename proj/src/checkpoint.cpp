#include "w2st/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace w2st {

namespace {

constexpr char kMagic[4] = {'W', '2', 'S', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    }
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint32_t u32(const char* what) {
    auto b = take(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::array<int, 7> config_fields(const ModelConfig& c) {
  return {c.d_model, c.n_heads, c.n_layers_enc, c.n_layers_dec, c.d_ff, c.max_len, c.vocab_size};
}

}  // namespace

std::string serialize_checkpoint(const ModelConfig& cfg, const Vocab& vocab,
                                 const ModelParams& params) {
  cfg.validate();
  if (static_cast<std::size_t>(cfg.vocab_size) != vocab.size()) {
    throw CheckpointError("config vocab_size " + std::to_string(cfg.vocab_size) +
                          " differs from vocabulary size " + std::to_string(vocab.size()));
  }
  check_params(params, cfg);
  std::string out(kMagic, 4);
  out.push_back(static_cast<char>(kCheckpointVersion));
  for (int f : config_fields(cfg)) put_u32(out, static_cast<std::uint32_t>(f));
  const std::string vtext = vocab.serialize();
  put_u32(out, static_cast<std::uint32_t>(vtext.size()));
  out += vtext;
  const auto named = params.named();
  put_u32(out, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(4, "magic").data(), kMagic, 4) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const auto version = static_cast<std::uint8_t>(r.take(1, "version")[0]);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig cfg;
  for (int* f : {&cfg.d_model, &cfg.n_heads, &cfg.n_layers_enc, &cfg.n_layers_dec, &cfg.d_ff,
                 &cfg.max_len, &cfg.vocab_size}) {
    *f = static_cast<int>(r.u32("config"));
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(e.what());
  }
  const std::uint32_t vbytes = r.u32("vocabulary size");
  Vocab vocab = Vocab::deserialize(r.take(vbytes, "vocabulary"));
  if (vocab.size() != static_cast<std::size_t>(cfg.vocab_size)) {
    throw CheckpointError("vocabulary size does not match config");
  }
  ModelParams params = ModelParams::init(cfg, 0);
  auto named = params.named();
  const std::uint32_t count = r.u32("tensor count");
  if (count != named.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, config needs " +
                          std::to_string(named.size()));
  }
  for (auto& [name, t] : named) {
    const std::uint32_t rank = r.u32("tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.u32("tensor shape");
    if (shape != t.shape()) {
      throw CheckpointError("tensor " + name + " has shape " + shape_str(shape) + ", expected " +
                            shape_str(t.shape()));
    }
    for (float& v : t.data()) v = std::bit_cast<float>(r.u32("tensor values"));
    t.check_finite("checkpoint load");
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint tensors");
  return {cfg, std::move(vocab), std::move(params)};
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const Vocab& vocab, const ModelParams& params) {
  const std::string bytes = serialize_checkpoint(cfg, vocab, params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace w2st
