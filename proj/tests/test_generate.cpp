#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "overfit.hpp"
#include "w2st/generate.hpp"
#include "w2st/graph.hpp"

using namespace w2st;

namespace {

const fixture::Overfit& trained() {
  static const fixture::Overfit f = fixture::train_overfit();
  return f;
}

struct Untrained {
  Vocab vocab = Vocab::build(std::vector<std::string>{"generate a story about a cat dog bird fish the end"}, 1, 64);
  ModelConfig cfg{16, 2, 1, 1, 32, 20, static_cast<int>(vocab.size())};
  ModelParams params = ModelParams::init(cfg, 4);
};

// Log-probabilities of `tokens` re-scored with a single full-sequence decode.
std::vector<double> rescore(const ModelParams& p, const ModelConfig& cfg, const Vocab& vocab,
                            const std::string& instruction, const std::vector<int>& tokens) {
  NoGradScope no_grad;
  const auto enc = encode(p, cfg, vocab.encode(instruction, false, SeqRole::kInstruction));
  TokenSeq prefix{{token::kBos}, SeqRole::kStory};
  prefix.ids.insert(prefix.ids.end(), tokens.begin(), tokens.end() - 1);
  const Tensor logits = decode_logits(p, cfg, enc, prefix);
  const auto v = static_cast<std::size_t>(cfg.vocab_size);
  std::vector<double> out;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    double mx = -1e30, z = 0;
    for (std::size_t j = 0; j < v; ++j) mx = std::max<double>(mx, logits.data()[t * v + j]);
    for (std::size_t j = 0; j < v; ++j) z += std::exp(logits.data()[t * v + j] - mx);
    out.push_back(logits.data()[t * v + static_cast<std::size_t>(tokens[t])] - mx - std::log(z));
  }
  return out;
}

}  // namespace

TEST_CASE("argmax breaks ties toward the lowest id") {
  const std::vector<float> a{0.5f, 2.0f, 2.0f, -1.0f};
  CHECK(argmax_lowest(a) == 1);
  const std::vector<float> b{3.0f, 3.0f};
  CHECK(argmax_lowest(b) == 0);
  CHECK_THROWS(argmax_lowest(std::span<const float>{}));
}

TEST_CASE("greedy decoding is deterministic") {
  const Untrained m;
  const GenParams gp{19};
  const auto a = generate(m.params, m.cfg, m.vocab, "a story about a cat", gp);
  const auto b = generate(m.params, m.cfg, m.vocab, "a story about a cat", gp);
  CHECK(a.tokens == b.tokens);
  CHECK(a.text == b.text);
  CHECK(a.logprobs == b.logprobs);
}

TEST_CASE("output never exceeds the token budget") {
  const Untrained m;
  for (int budget : {1, 3, 7, 19}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const GenParams gp{budget, DecodeMode::kSample, 1.5, seed};
      const auto g = generate(m.params, m.cfg, m.vocab, "the dog", gp);
      CHECK(g.tokens.size() <= static_cast<std::size_t>(budget));
      CHECK(g.logprobs.size() == g.tokens.size());
    }
  }
}

TEST_CASE("generation parameter errors") {
  const Untrained m;
  CHECK_THROWS_AS(generate(m.params, m.cfg, m.vocab, "cat", GenParams{0}), std::invalid_argument);
  CHECK_THROWS_AS(generate(m.params, m.cfg, m.vocab, "cat", GenParams{20}), std::invalid_argument);
  CHECK_THROWS_AS(generate(m.params, m.cfg, m.vocab, "cat", GenParams{5, DecodeMode::kSample, 0.0}),
                  std::invalid_argument);
  std::string long_instruction;
  for (int i = 0; i < 21; ++i) long_instruction += "cat ";
  CHECK_THROWS_AS(generate(m.params, m.cfg, m.vocab, long_instruction, GenParams{5}), std::length_error);
}

TEST_CASE("EOS terminates output and never appears mid-sequence") {
  const Untrained m;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto g = generate(m.params, m.cfg, m.vocab, "a fish", GenParams{19, DecodeMode::kSample, 2.0, seed});
    for (std::size_t i = 0; i + 1 < g.tokens.size(); ++i) CHECK(g.tokens[i] != token::kEos);
    CHECK(g.text.find("<eos>") == std::string::npos);
  }
}

TEST_CASE("reported log-probabilities match a full-sequence rescoring") {
  const Untrained m;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto g = generate(m.params, m.cfg, m.vocab, "a bird", GenParams{12, DecodeMode::kSample, 1.0, seed});
    const auto ref = rescore(m.params, m.cfg, m.vocab, "a bird", g.tokens);
    REQUIRE(ref.size() == g.logprobs.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(g.logprobs[i] - ref[i]) < 1e-5);
  }
}

TEST_CASE("near-zero temperature sampling reproduces greedy output") {
  const Untrained m;
  for (const char* instruction : {"a cat", "the dog the end", "generate a story"}) {
    const auto greedy = generate(m.params, m.cfg, m.vocab, instruction, GenParams{19});
    const auto cold = generate(m.params, m.cfg, m.vocab, instruction, GenParams{19, DecodeMode::kSample, 1e-4, 99});
    CHECK(cold.tokens == greedy.tokens);
  }
}

TEST_CASE("overfit model reproduces memorized stories from strong instructions") {
  const auto& f = trained();
  REQUIRE(f.final_loss < 0.1);
  const int budget = f.cfg.max_len - 1;
  for (const auto& ex : f.examples) {
    if (ex.strength != Strength::kStrong) continue;
    const auto g = generate(f.params, f.cfg, f.vocab, ex.instruction, GenParams{budget});
    CHECK(g.text == normalize_text(ex.story));
    REQUIRE(!g.tokens.empty());
    CHECK(g.tokens.back() == token::kEos);
    const auto ref = rescore(f.params, f.cfg, f.vocab, ex.instruction, g.tokens);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(g.logprobs[i] - ref[i]) < 1e-5);
  }
}
