#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "w2st/model.hpp"
#include "w2st/tokenizer.hpp"

namespace w2st {

// Checkpoint layout, all integers little-endian:
//
//   "W2ST"                       4-byte magic
//   u8   version                 currently 1
//   i32 x 7                      d_model, n_heads, n_layers_enc, n_layers_dec,
//                                d_ff, max_len, vocab_size
//   u32  vocab_bytes, bytes      vocabulary, one token per line, line = id
//   u32  tensor_count
//   per tensor, in ModelParams::named() order:
//     u32 rank, u32 dims[rank], f32 values[product(dims)]

inline constexpr std::uint8_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  Vocab vocab;
  ModelParams params;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string serialize_checkpoint(const ModelConfig& cfg, const Vocab& vocab,
                                 const ModelParams& params);
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const Vocab& vocab, const ModelParams& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace w2st
