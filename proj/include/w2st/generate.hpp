#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "w2st/model.hpp"
#include "w2st/tokenizer.hpp"

namespace w2st {

enum class DecodeMode { kGreedy, kSample };

struct GenParams {
  int max_new_tokens = 48;
  DecodeMode mode = DecodeMode::kGreedy;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  /// Checks the decoding budget fits the model (max_new_tokens <= max_len - 1,
  /// since BOS occupies the first decoder position).
  void validate(const ModelConfig& cfg) const;
};

struct Generation {
  std::string text;
  /// Emitted ids, including a terminating EOS when one was produced.
  std::vector<int> tokens;
  /// Natural-log probability of each emitted token under the (untempered) model.
  std::vector<float> logprobs;
};

/// Encodes the instruction once, then decodes from BOS one token at a time,
/// re-running the decoder over the whole prefix each step. Stops at EOS or
/// after max_new_tokens tokens.
Generation generate(const ModelParams& params, const ModelConfig& cfg, const Vocab& vocab,
                    const std::string& instruction, const GenParams& gp);

/// Lowest id among the maxima.
int argmax_lowest(std::span<const float> logits);

}  // namespace w2st
