#include "w2st/metrics.hpp"

#include <cstdio>

#include "w2st/graph.hpp"

namespace w2st {

double bleu_n(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
              int n) {
  return bleu_n<std::string>(std::span(candidate), std::span(reference), n);
}

double rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference) {
  return rouge_l<std::string>(std::span(candidate), std::span(reference));
}

namespace {

struct NllSum {
  double total = 0.0;
  std::size_t tokens = 0;
};

// Sums -log p over targets from the decoder logits directly, independent of
// the cross-entropy op used for training.
NllSum story_nll(const ModelParams& params, const ModelConfig& cfg, const EncodedExample& ex) {
  const EncoderStates enc = encode(params, cfg, ex.instruction);
  std::vector<int> target;
  for (int id : ex.story.ids) {
    if (id != token::kPad) target.push_back(id);
  }
  const Tensor logits = decode_logits(params, cfg, enc, teacher_input({target, SeqRole::kStory}));
  const auto v = static_cast<std::size_t>(cfg.vocab_size);
  NllSum out;
  for (std::size_t t = 0; t < target.size(); ++t) {
    const auto row = logits.data().subspan(t * v, v);
    out.total -= log_softmax_row(row)[static_cast<std::size_t>(target[t])];
    ++out.tokens;
  }
  return out;
}

struct Accumulator {
  std::size_t count = 0;
  double bleu1 = 0.0, bleu2 = 0.0, rouge = 0.0;
  NllSum nll;

  void add(double b1, double b2, double r, const NllSum& n) {
    ++count;
    bleu1 += b1;
    bleu2 += b2;
    rouge += r;
    nll.total += n.total;
    nll.tokens += n.tokens;
  }
  std::optional<SplitScores> finish() const {
    if (count == 0) return std::nullopt;
    const auto c = static_cast<double>(count);
    return SplitScores{count, bleu1 / c, bleu2 / c, rouge / c,
                       std::exp(nll.total / static_cast<double>(nll.tokens))};
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

double perplexity(const ModelParams& params, const ModelConfig& cfg,
                  std::span<const EncodedExample> examples) {
  if (examples.empty()) throw std::invalid_argument("perplexity over no examples");
  NoGradScope no_grad;
  NllSum sum;
  for (const auto& ex : examples) {
    const NllSum n = story_nll(params, cfg, ex);
    sum.total += n.total;
    sum.tokens += n.tokens;
  }
  return std::exp(sum.total / static_cast<double>(sum.tokens));
}

EvalReport evaluate(const ModelParams& params, const ModelConfig& cfg, const Vocab& vocab,
                    std::span<const InstructionExample> test, const StoryGenerator& generator) {
  if (test.empty()) throw std::invalid_argument("evaluate: empty test split");
  NoGradScope no_grad;
  Accumulator all, weak, strong;
  for (const auto& ex : test) {
    const auto cand = split_words(generator(ex));
    const auto ref = split_words(ex.story);
    const double b1 = bleu_n(cand, ref, 1);
    const double b2 = bleu_n(cand, ref, 2);
    const double r = cand.empty() ? 0.0 : rouge_l(cand, ref);
    const NllSum n = story_nll(params, cfg, encode_example(vocab, ex));
    all.add(b1, b2, r, n);
    (ex.strength == Strength::kWeak ? weak : strong).add(b1, b2, r, n);
  }
  return {all.finish(), weak.finish(), strong.finish()};
}

EvalReport evaluate(const ModelParams& params, const ModelConfig& cfg, const Vocab& vocab,
                    std::span<const InstructionExample> test, const GenParams& gp) {
  return evaluate(params, cfg, vocab, test, [&](const InstructionExample& ex) {
    return generate(params, cfg, vocab, ex.instruction, gp).text;
  });
}

std::string eval_csv(const EvalReport& report, const std::string& checkpoint) {
  std::string out = "checkpoint,split,count,bleu1,bleu2,rouge_l,perplexity\n";
  const std::pair<const char*, const std::optional<SplitScores>*> rows[] = {
      {"all", &report.all}, {"weak", &report.weak}, {"strong", &report.strong}};
  for (const auto& [name, s] : rows) {
    if (!*s) continue;
    const SplitScores& v = **s;
    out += checkpoint + "," + name + "," + std::to_string(v.count) + "," + fmt(v.bleu1) + "," +
           fmt(v.bleu2) + "," + fmt(v.rouge_l) + "," + fmt(v.perplexity) + "\n";
  }
  return out;
}

}  // namespace w2st
