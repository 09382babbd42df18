#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "w2st/tensor.hpp"

namespace w2st {

/// Row-major boolean matrix; true marks a key a query may attend to.
struct AttentionMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allowed;

  static AttentionMask causal(std::size_t n);
  static AttentionMask all(std::size_t rows, std::size_t cols);
  bool operator()(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }
};

// Differentiable primitives. Each records a backward step into the active
// Graph when any input requires a gradient, and rejects non-finite outputs.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
/// x[n x m] + bias[m] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);
Tensor relu(const Tensor& x);
Tensor sum(const Tensor& x);

/// Softmax along `axis`, with per-slice max subtraction.
Tensor softmax(const Tensor& x, std::size_t axis);

/// Row softmax of a 2-D tensor where disallowed entries get weight 0, as if
/// they carried a -inf bias. Every row must allow at least one column.
Tensor masked_softmax(const Tensor& x, const AttentionMask& mask);

/// Per-row normalization of x[n x d] with learned gain and bias of size d.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  float eps = 1e-5f);

/// Gathers rows of table[V x d] by id.
Tensor embedding(const Tensor& table, std::span<const int> ids);

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t width);
Tensor concat_cols(std::span<const Tensor> parts);

enum class Reduction { kMean, kSum };

/// Negative log-likelihood of `targets` under row-softmax of logits[n x V].
/// Positions whose target equals `ignore_index` contribute neither value nor
/// gradient. Mean reduction divides by the number of counted positions.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     int ignore_index, Reduction reduction = Reduction::kMean);

/// Row-wise log-softmax values, no gradient tracking.
std::vector<float> log_softmax_row(std::span<const float> logits);

}  // namespace w2st
