#pragma once

#include <functional>
#include <string>
#include <vector>

#include "w2st/tensor.hpp"

namespace w2st {

struct GradCheckEntry {
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;

  bool passed() const;
  std::vector<std::size_t> failing() const;
  std::string summary() const;
};

/// Scalar-valued function of whatever tensors it closes over.
using ScalarFn = std::function<Tensor()>;

/// Compares the gradient of `f` with respect to `x`, obtained by one tracked
/// evaluation and backward pass, against central differences
/// (f(x + h e_i) - f(x - h e_i)) / 2h. Relative error for a coordinate is
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
///
/// `x` must be a tensor that `f` reads; it is perturbed in place and restored.
/// `x.grad` is overwritten. Coordinates may be subsampled with `max_coords`
/// (0 checks all), taking an even stride through the tensor.
GradCheckReport finite_diff_check(const ScalarFn& f, Tensor x, double h, double tol,
                                  std::size_t max_coords = 0);

/// Same comparison against a caller-supplied analytic gradient.
GradCheckReport finite_diff_check(const ScalarFn& f, Tensor x, std::span<const float> analytic,
                                  double h, double tol, std::size_t max_coords = 0);

}  // namespace w2st
