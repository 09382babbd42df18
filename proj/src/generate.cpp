#include "w2st/generate.hpp"

#include <cmath>
#include <stdexcept>

#include "w2st/graph.hpp"
#include "w2st/rng.hpp"

namespace w2st {

void GenParams::validate(const ModelConfig& cfg) const {
  if (max_new_tokens < 1) throw std::invalid_argument("max_new_tokens must be at least 1");
  if (max_new_tokens > cfg.max_len - 1) {
    throw std::invalid_argument("max_new_tokens " + std::to_string(max_new_tokens) +
                                " exceeds the decoder budget of " + std::to_string(cfg.max_len - 1));
  }
  if (mode == DecodeMode::kSample && !(temperature > 0.0)) {
    throw std::invalid_argument("sampling temperature must be positive");
  }
}

int argmax_lowest(std::span<const float> logits) {
  if (logits.empty()) throw std::invalid_argument("argmax over empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<int>(best);
}

namespace {

int sample(std::span<const float> logits, double temperature, Rng& rng) {
  // Work in log space so tiny temperatures collapse onto the argmax.
  const int top = argmax_lowest(logits);
  const double mx = logits[static_cast<std::size_t>(top)];
  std::vector<double> w(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    w[i] = std::exp((logits[i] - mx) / temperature);
    z += w[i];
  }
  double u = rng.uniform() * z;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (u < w[i]) return static_cast<int>(i);
    u -= w[i];
  }
  return top;
}

}  // namespace

Generation generate(const ModelParams& params, const ModelConfig& cfg, const Vocab& vocab,
                    const std::string& instruction, const GenParams& gp) {
  gp.validate(cfg);
  const TokenSeq instr = vocab.encode(instruction, false, SeqRole::kInstruction);
  if (instr.empty()) throw std::invalid_argument("instruction has no tokens");
  if (instr.size() > static_cast<std::size_t>(cfg.max_len)) {
    throw std::length_error("instruction has " + std::to_string(instr.size()) +
                            " tokens, model accepts at most " + std::to_string(cfg.max_len));
  }
  NoGradScope no_grad;
  const EncoderStates enc = encode(params, cfg, instr);
  Rng rng(gp.seed);
  TokenSeq prefix{{token::kBos}, SeqRole::kStory};
  Generation out;
  const auto vsize = static_cast<std::size_t>(cfg.vocab_size);
  for (int step = 0; step < gp.max_new_tokens; ++step) {
    const Tensor logits = decode_logits(params, cfg, enc, prefix);
    const auto all = logits.data();
    const std::span<const float> last = all.subspan((prefix.size() - 1) * vsize, vsize);
    const int next = gp.mode == DecodeMode::kGreedy ? argmax_lowest(last)
                                                    : sample(last, gp.temperature, rng);
    out.tokens.push_back(next);
    out.logprobs.push_back(log_softmax_row(last)[static_cast<std::size_t>(next)]);
    if (next == token::kEos) break;
    prefix.ids.push_back(next);
  }
  out.text = vocab.decode(out.tokens);
  return out;
}

}  // namespace w2st
