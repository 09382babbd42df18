#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "oracles.hpp"
#include "w2st/checkpoint.hpp"
#include "w2st/gradcheck.hpp"
#include "w2st/graph.hpp"
#include "w2st/model.hpp"
#include "w2st/optimizer.hpp"
#include "w2st/rng.hpp"

using namespace w2st;

namespace {

ModelConfig tiny_config(int vocab = 12) { return {8, 2, 1, 1, 16, 16, vocab}; }

Tensor random_tensor(Rng& rng, Shape shape, bool grad = false) {
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return Tensor::from(std::move(shape), std::move(v), grad);
}

std::vector<double> as_double(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

TokenSeq instr(std::vector<int> ids) { return {std::move(ids), SeqRole::kInstruction}; }
TokenSeq story(std::vector<int> ids) { return {std::move(ids), SeqRole::kStory}; }

TokenSeq random_ids(Rng& rng, std::size_t n, int vocab, SeqRole role) {
  TokenSeq s{{}, role};
  for (std::size_t i = 0; i < n; ++i) s.ids.push_back(5 + static_cast<int>(rng.below(vocab - 5)));
  return s;
}

Vocab vocab_of_size(int n) {
  std::vector<std::string> lines;
  std::string text;
  for (int i = 0; i < n - token::kNumReserved; ++i) text += "w" + std::to_string(i) + " ";
  lines.push_back(text);
  return Vocab::build(lines, 1, static_cast<std::size_t>(n));
}

}  // namespace

TEST_CASE("attention with a single key returns its value") {
  const Tensor q = Tensor::from({2, 2}, {1, 0, 0, 3});
  const Tensor k = Tensor::from({1, 2}, {0.5f, -2});
  const Tensor v = Tensor::from({1, 3}, {7, 8, 9});
  const Tensor out = attention(q, k, v);
  CHECK(out.shape() == Shape{2, 3});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(out.at(i, j) == doctest::Approx(7 + j));
}

TEST_CASE("attention over identical keys averages the values") {
  const Tensor q = Tensor::from({1, 2}, {4, -1});
  const Tensor k = Tensor::from({3, 2}, {1, 1, 1, 1, 1, 1});
  const Tensor v = Tensor::from({3, 1}, {1, 2, 6});
  CHECK(attention(q, k, v).item() == doctest::Approx(3.0));
}

TEST_CASE("attention matches the composition oracle, masked and unmasked") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t nq = 1 + rng.below(6), nk = 1 + rng.below(6), d = 1 + rng.below(5),
                      dv = 1 + rng.below(5);
    const Tensor q = random_tensor(rng, {nq, d}), k = random_tensor(rng, {nk, d}),
                 v = random_tensor(rng, {nk, dv});
    auto ref = oracle::attention(as_double(q), as_double(k), as_double(v), nq, nk, d, dv);
    Tensor out = attention(q, k, v);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(out.data()[i] - ref[i]) < 1e-5);

    AttentionMask mask = AttentionMask::all(nq, nk);
    std::vector<int> keep(nq * nk, 1);
    for (std::size_t i = 0; i < nq; ++i) {
      const std::size_t drop = rng.below(nk);  // leaves at least one key per row
      for (std::size_t j = 0; j < drop; ++j) {
        mask.allowed[i * nk + j] = 0;
        keep[i * nk + j] = 0;
      }
    }
    ref = oracle::attention(as_double(q), as_double(k), as_double(v), nq, nk, d, dv, &keep);
    out = attention(q, k, v, &mask);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(out.data()[i] - ref[i]) < 1e-5);
  }
}

TEST_CASE("attention rejects a fully masked row") {
  AttentionMask mask = AttentionMask::all(2, 2);
  mask.allowed[2] = mask.allowed[3] = 0;
  CHECK_THROWS(attention(Tensor::zeros({2, 2}), Tensor::zeros({2, 2}), Tensor::zeros({2, 2}), &mask));
}

TEST_CASE("config validation") {
  ModelConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.n_heads = 3;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.vocab_size = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("encoder and decoder shapes, and every attention row sums to one") {
  const ModelConfig cfg = tiny_config();
  const ModelParams p = ModelParams::init(cfg, 1);
  ForwardTrace trace;
  const auto enc = encode(p, cfg, instr({5, 6, 7, 8, 9}), &trace);
  CHECK(enc.hidden.shape() == Shape{5, 8});
  const Tensor logits = decode_logits(p, cfg, enc, story({1, 10, 11}), &trace);
  CHECK(logits.shape() == Shape{3, 12});
  // 1 encoder layer + 1 decoder layer with self and cross attention, 2 heads each.
  CHECK(trace.attention_weights.size() == 6);
  for (const Tensor& w : trace.attention_weights) {
    const std::size_t rows = w.shape()[0], cols = w.shape()[1];
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < cols; ++j) s += w.at(i, j);
      CHECK(std::abs(s - 1.0) < 1e-5);
    }
  }
}

TEST_CASE("decoder self-attention is causal") {
  const ModelConfig cfg = tiny_config();
  const ModelParams p = ModelParams::init(cfg, 2);
  ForwardTrace trace;
  const auto enc = encode(p, cfg, instr({5, 6}));
  decode_logits(p, cfg, enc, story({1, 7, 8, 9}), &trace);
  // Decoder traces alternate self (4x4) and cross (4x2) per head.
  int self_seen = 0;
  for (const Tensor& w : trace.attention_weights) {
    if (w.shape()[1] != 4) continue;
    ++self_seen;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = i + 1; j < 4; ++j) CHECK(w.at(i, j) == 0.0f);
  }
  CHECK(self_seen == 2);
}

TEST_CASE("changing a later decoder token leaves earlier logits bit-identical") {
  const ModelConfig cfg = tiny_config();
  const ModelParams p = ModelParams::init(cfg, 3);
  const auto enc = encode(p, cfg, instr({5, 6, 7}));
  const Tensor a = decode_logits(p, cfg, enc, story({1, 8, 9, 10, 11}));
  const Tensor b = decode_logits(p, cfg, enc, story({1, 8, 9, 6, 5}));
  for (std::size_t i = 0; i < 3 * 12; ++i) CHECK(a.data()[i] == b.data()[i]);
  bool later_differs = false;
  for (std::size_t i = 3 * 12; i < 5 * 12; ++i) later_differs |= a.data()[i] != b.data()[i];
  CHECK(later_differs);
}

TEST_CASE("sequence length limits") {
  const ModelConfig cfg = tiny_config();
  const ModelParams p = ModelParams::init(cfg, 4);
  CHECK_THROWS_AS(encode(p, cfg, instr({})), std::length_error);
  CHECK_THROWS_AS(encode(p, cfg, instr(std::vector<int>(17, 5))), std::length_error);
  CHECK_NOTHROW(encode(p, cfg, instr(std::vector<int>(16, 5))));
}

TEST_CASE("init and forward are deterministic") {
  const ModelConfig cfg = tiny_config();
  const ModelParams a = ModelParams::init(cfg, 9), b = ModelParams::init(cfg, 9);
  const ModelParams c = ModelParams::init(cfg, 10);
  const auto na = a.named(), nb = b.named(), nc = c.named();
  bool any_diff = false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    CHECK(na[i].first == nb[i].first);
    CHECK(std::memcmp(na[i].second.data().data(), nb[i].second.data().data(),
                      na[i].second.numel() * sizeof(float)) == 0);
    any_diff |= std::memcmp(na[i].second.data().data(), nc[i].second.data().data(),
                            na[i].second.numel() * sizeof(float)) != 0;
  }
  CHECK(any_diff);
}

TEST_CASE("golden forward values for a fixed tiny model") {
  const ModelConfig cfg = tiny_config();
  const ModelParams p = ModelParams::init(cfg, 42);
  const auto enc = encode(p, cfg, instr({5, 7, 9, 3}));
  const std::vector<float> enc_golden = {
      -0.945357025f, 1.62996411f,  0.446794689f, 0.346920729f,  -0.789686918f, -1.50175321f,
      -0.271663785f, 1.08478153f,  1.17562068f,  0.713517368f,  0.992682457f,  -0.405343741f,
      -0.518670142f, -2.13173842f, -0.168401212f, 0.342333049f, 0.892996967f,  -1.8556931f,
      0.284793347f,  0.853272259f, -0.356197834f, 0.156445876f, -1.17058825f,  1.19497073f,
      -0.138889506f, -1.9880147f,  0.154346392f,  0.776566744f, 1.22065783f,   -0.949931741f,
      -0.076400809f, 1.00166583f};
  REQUIRE(enc.hidden.numel() == enc_golden.size());
  for (std::size_t i = 0; i < enc_golden.size(); ++i)
    CHECK(std::abs(enc.hidden.data()[i] - enc_golden[i]) < 1e-5);

  const Tensor logits = decode_logits(p, cfg, enc, story({1, 6, 8}));
  const std::vector<float> logit_golden = {
      1.52085054f,   0.146102965f, 1.63427544f,   0.692609727f, 0.787160158f,  -0.432823718f,
      -0.322829485f, 0.74398154f,  -1.01223433f,  -1.05655122f, -0.421667874f, 0.137754321f,
      1.14016855f,   -1.50343549f, 0.772767186f,  -0.903442204f, 0.882870138f, 0.165266812f,
      0.244915515f,  0.16930595f,  -0.81712079f,  -0.259993702f, -0.523953736f, -0.389175057f,
      0.662479997f,  -1.44224954f, 0.0167322457f, -0.58991611f, 0.418250322f,  0.110105529f,
      -0.476272404f, 0.144847274f, -0.0755981579f, 0.856855214f, 0.319931418f, -0.20687896f};
  REQUIRE(logits.numel() == logit_golden.size());
  for (std::size_t i = 0; i < logit_golden.size(); ++i)
    CHECK(std::abs(logits.data()[i] - logit_golden[i]) < 1e-5);
}

TEST_CASE("random-init loss averaged over seeds is near the uniform predictor") {
  for (const ModelConfig cfg : {tiny_config(40), ModelConfig{64, 2, 2, 2, 128, 64, 60}}) {
    const double uniform = std::log(static_cast<double>(cfg.vocab_size));
    double mean = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const ModelParams p = ModelParams::init(cfg, seed);
      Rng rng(seed + 100);
      const TokenSeq in = random_ids(rng, 6, cfg.vocab_size, SeqRole::kInstruction);
      TokenSeq out = random_ids(rng, 10, cfg.vocab_size, SeqRole::kStory);
      out.ids.push_back(token::kEos);
      mean += sequence_loss(p, cfg, in, out).item() / 10;
    }
    INFO("d_model " << cfg.d_model << " mean " << mean << " ln V " << uniform);
    CHECK(mean > 0.85 * uniform);
    CHECK(mean < 1.15 * uniform);
  }
}

TEST_CASE("story must end with EOS and be non-empty") {
  const ModelConfig cfg = tiny_config();
  const ModelParams p = ModelParams::init(cfg, 4);
  CHECK_THROWS_AS(sequence_loss(p, cfg, instr({5}), story({6, 7})), std::invalid_argument);
  CHECK_THROWS_AS(sequence_loss(p, cfg, instr({5}), story({token::kPad})), std::invalid_argument);
}

TEST_CASE("teacher forcing input") {
  CHECK(teacher_input(story({6, 7, 2})).ids == std::vector<int>{1, 6, 7});
  CHECK(target_count(story({6, 7, 2, 0, 0})) == 3);
}

TEST_CASE("trailing PAD tokens do not change the loss") {
  const ModelConfig cfg = tiny_config();
  const ModelParams p = ModelParams::init(cfg, 6);
  const double base = sequence_loss(p, cfg, instr({5, 6, 7}), story({8, 9, 2})).item();
  const double padded =
      sequence_loss(p, cfg, instr({5, 6, 7, 0, 0}), story({8, 9, 2, 0, 0, 0})).item();
  CHECK(base == padded);
}

TEST_CASE("backward reaches every parameter") {
  const ModelConfig cfg = tiny_config();
  ModelParams p = ModelParams::init(cfg, 7);
  for (Tensor& t : p.tensors()) t.set_requires_grad(true);
  Graph g;
  Tensor loss;
  {
    GraphScope scope(g);
    loss = sequence_loss(p, cfg, instr({5, 6, 7}), story({8, 9, 10, 2}));
  }
  g.backward(loss);
  for (const auto& [name, t] : p.named()) {
    INFO(name);
    REQUIRE(t.has_grad());
    double norm = 0;
    for (float v : t.grad()) {
      CHECK(std::isfinite(v));
      norm += std::abs(v);
    }
    CHECK(norm > 0);
  }
}

TEST_CASE("analytic gradients match finite differences for every parameter tensor") {
  const ModelConfig cfg = tiny_config();
  ModelParams p = ModelParams::init(cfg, 8);
  for (Tensor& t : p.tensors()) t.set_requires_grad(true);
  const TokenSeq in = instr({5, 6, 7});
  const TokenSeq out = story({8, 9, 10, 11, 2});
  const ScalarFn f = [&] { return sequence_loss(p, cfg, in, out); };
  for (const auto& [name, t] : p.named()) {
    const auto report = finite_diff_check(f, t, 1e-2, 1e-2);
    INFO(name << ": " << report.summary());
    CHECK(report.passed());
  }
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const ModelConfig cfg = tiny_config(20);
  const Vocab vocab = vocab_of_size(20);
  REQUIRE(vocab.size() == 20);
  const ModelParams p = ModelParams::init(cfg, 11);
  const std::string bytes = serialize_checkpoint(cfg, vocab, p);
  CHECK(bytes.substr(0, 4) == "W2ST");
  const Checkpoint ck = deserialize_checkpoint(bytes);
  CHECK(ck.config == cfg);
  CHECK(ck.vocab == vocab);
  const auto a = p.named(), b = ck.params.named();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].second.shape() == b[i].second.shape());
    CHECK(std::memcmp(a[i].second.data().data(), b[i].second.data().data(),
                      a[i].second.numel() * sizeof(float)) == 0);
  }
  CHECK(serialize_checkpoint(ck.config, ck.vocab, ck.params) == bytes);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const ModelConfig cfg = tiny_config(20);
  const std::string bytes = serialize_checkpoint(cfg, vocab_of_size(20), ModelParams::init(cfg, 1));
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad), CheckpointError);
  bad = bytes;
  bad[4] = 9;
  CHECK_THROWS_AS(deserialize_checkpoint(bad), CheckpointError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), CheckpointError);
  CHECK_THROWS_AS(serialize_checkpoint(cfg, vocab_of_size(15), ModelParams::init(cfg, 1)),
                  CheckpointError);
}

TEST_CASE("a single example can be memorized") {
  const ModelConfig cfg{16, 2, 1, 1, 32, 16, 12};
  ModelParams p = ModelParams::init(cfg, 12);
  const TokenSeq in = instr({5, 6, 7});
  const TokenSeq out = story({8, 9, 10, 11, 8, 2});
  Adam opt(p.tensors());
  double loss = 0;
  for (int step = 0; step < 150 && !(loss > 0 && loss < 0.05); ++step) {
    p.zero_grad();
    Graph g;
    Tensor l;
    {
      GraphScope scope(g);
      l = sequence_loss(p, cfg, in, out);
    }
    g.backward(l);
    opt.step(1e-2);
    loss = sequence_loss(p, cfg, in, out).item();
  }
  CHECK(loss < 0.05);
}
