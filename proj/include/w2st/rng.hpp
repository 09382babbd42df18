#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace w2st {

/// Seeded generator with platform-independent derived values.
///
/// std::mt19937_64's raw output is fully specified by the standard but the
/// std:: distributions are not, so every draw goes through these helpers.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& xs) {
    for (std::size_t i = xs.size(); i > 1; --i) std::swap(xs[i - 1], xs[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

/// Stable named sub-seed so components draw independent streams from one
/// global seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view name);

}  // namespace w2st
