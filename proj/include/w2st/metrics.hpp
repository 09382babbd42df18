#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "w2st/data.hpp"
#include "w2st/generate.hpp"
#include "w2st/model.hpp"

namespace w2st {

namespace detail {

template <typename T>
std::map<std::vector<T>, long> ngram_counts(std::span<const T> xs, std::size_t n) {
  std::map<std::vector<T>, long> counts;
  if (xs.size() < n) return counts;
  for (std::size_t i = 0; i + n <= xs.size(); ++i) ++counts[std::vector<T>(xs.begin() + i, xs.begin() + i + n)];
  return counts;
}

/// Clipped n-gram precision; 0 when the candidate has no n-grams.
template <typename T>
double clipped_precision(std::span<const T> cand, std::span<const T> ref, std::size_t n) {
  if (cand.size() < n) return 0.0;
  const auto c = ngram_counts(cand, n);
  const auto r = ngram_counts(ref, n);
  long matched = 0;
  for (const auto& [gram, count] : c) {
    auto it = r.find(gram);
    if (it != r.end()) matched += std::min(count, it->second);
  }
  return static_cast<double>(matched) / static_cast<double>(cand.size() - n + 1);
}

}  // namespace detail

/// Sentence BLEU-n (n = 1 or 2): geometric mean of clipped 1..n-gram
/// precisions times the brevity penalty exp(1 - r/c) when c < r. No
/// smoothing, so any zero precision gives 0. Orders longer than the
/// candidate are left out of the mean (effective order min(n, c)).
template <typename T>
double bleu_n(std::span<const T> candidate, std::span<const T> reference, int n) {
  if (reference.empty()) throw std::invalid_argument("bleu: empty reference");
  if (n != 1 && n != 2) throw std::invalid_argument("bleu: only n = 1 or 2 is supported");
  if (candidate.empty()) return 0.0;
  const int order = std::min<int>(n, static_cast<int>(candidate.size()));
  double log_sum = 0.0;
  for (int k = 1; k <= order; ++k) {
    const double p = detail::clipped_precision(candidate, reference, static_cast<std::size_t>(k));
    if (p == 0.0) return 0.0;
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::exp(log_sum / order);
}

template <typename T>
std::size_t lcs_length(std::span<const T> a, std::span<const T> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// ROUGE-L F1 from the longest common subsequence.
template <typename T>
double rouge_l(std::span<const T> candidate, std::span<const T> reference) {
  if (candidate.empty() || reference.empty()) throw std::invalid_argument("rouge_l: empty input");
  const auto l = static_cast<double>(lcs_length(candidate, reference));
  if (l == 0.0) return 0.0;
  const double p = l / static_cast<double>(candidate.size());
  const double r = l / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

// Convenience overloads for word lists.
double bleu_n(const std::vector<std::string>& candidate, const std::vector<std::string>& reference, int n);
double rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference);

/// exp of the mean per-token NLL over all non-PAD story tokens, each example
/// conditioned on its own instruction.
double perplexity(const ModelParams& params, const ModelConfig& cfg,
                  std::span<const EncodedExample> examples);

struct SplitScores {
  std::size_t count = 0;
  double bleu1 = 0.0;
  double bleu2 = 0.0;
  double rouge_l = 0.0;
  double perplexity = 1.0;
};

/// Scores per split; a split without examples is empty.
struct EvalReport {
  std::optional<SplitScores> all;
  std::optional<SplitScores> weak;
  std::optional<SplitScores> strong;
};

/// Produces a story for an example.
using StoryGenerator = std::function<std::string(const InstructionExample&)>;

/// Generates one story per example, scores it against the reference with
/// sentence BLEU-1/2 and ROUGE-L (averaged per split), and computes
/// perplexity of the reference stories per split.
EvalReport evaluate(const ModelParams& params, const ModelConfig& cfg, const Vocab& vocab,
                    std::span<const InstructionExample> test, const GenParams& gp);
EvalReport evaluate(const ModelParams& params, const ModelConfig& cfg, const Vocab& vocab,
                    std::span<const InstructionExample> test, const StoryGenerator& generator);

/// CSV with header checkpoint,split,count,bleu1,bleu2,rouge_l,perplexity and
/// one row per non-empty split in the order all, weak, strong.
std::string eval_csv(const EvalReport& report, const std::string& checkpoint);

}  // namespace w2st
