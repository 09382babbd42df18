#pragma once

// Reference computations used only by tests. Each is written directly from
// the definition, sharing no code with the library.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace oracle {

inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
  std::vector<double> e(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) z += e[i] = std::exp(x[i]);
  for (auto& v : e) v /= z;
  return e;
}

/// softmax(q k^T / sqrt(d)) v, row-major, with an optional mask (1 = keep).
inline std::vector<double> attention(const std::vector<double>& q, const std::vector<double>& k,
                                     const std::vector<double>& v, std::size_t nq, std::size_t nk,
                                     std::size_t d, std::size_t dv,
                                     const std::vector<int>* mask = nullptr) {
  std::vector<double> out(nq * dv, 0.0);
  for (std::size_t i = 0; i < nq; ++i) {
    std::vector<double> s;
    std::vector<std::size_t> keys;
    for (std::size_t j = 0; j < nk; ++j) {
      if (mask && !(*mask)[i * nk + j]) continue;
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += q[i * d + c] * k[j * d + c];
      s.push_back(dot / std::sqrt(static_cast<double>(d)));
      keys.push_back(j);
    }
    const auto w = softmax(s);
    for (std::size_t t = 0; t < keys.size(); ++t)
      for (std::size_t c = 0; c < dv; ++c) out[i * dv + c] += w[t] * v[keys[t] * dv + c];
  }
  return out;
}

/// Brute-force n-gram enumeration: lists every n-gram, counts by linear scan.
template <typename T>
double clipped_precision(const std::vector<T>& cand, const std::vector<T>& ref, std::size_t n) {
  if (cand.size() < n) return 0.0;
  auto grams = [n](const std::vector<T>& xs) {
    std::vector<std::vector<T>> g;
    for (std::size_t i = 0; i + n <= xs.size(); ++i) g.emplace_back(xs.begin() + i, xs.begin() + i + n);
    return g;
  };
  const auto cg = grams(cand), rg = grams(ref);
  std::vector<std::vector<T>> distinct;
  for (const auto& g : cg)
    if (std::find(distinct.begin(), distinct.end(), g) == distinct.end()) distinct.push_back(g);
  double matched = 0;
  for (const auto& g : distinct) {
    const auto in_c = std::count(cg.begin(), cg.end(), g);
    const auto in_r = std::count(rg.begin(), rg.end(), g);
    matched += static_cast<double>(std::min(in_c, in_r));
  }
  return matched / static_cast<double>(cg.size());
}

template <typename T>
double bleu(const std::vector<T>& cand, const std::vector<T>& ref, int n) {
  if (cand.empty()) return 0.0;
  const int order = std::min<int>(n, static_cast<int>(cand.size()));
  double prod = 1.0;
  for (int k = 1; k <= order; ++k) prod *= clipped_precision(cand, ref, static_cast<std::size_t>(k));
  if (prod == 0.0) return 0.0;
  const double c = static_cast<double>(cand.size()), r = static_cast<double>(ref.size());
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::pow(prod, 1.0 / order);
}

/// Full quadratic LCS table.
template <typename T>
std::size_t lcs(const std::vector<T>& a, const std::vector<T>& b) {
  std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      t[i][j] = a[i - 1] == b[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
  return t[a.size()][b.size()];
}

template <typename T>
double rouge_l(const std::vector<T>& a, const std::vector<T>& b) {
  const double l = static_cast<double>(lcs(a, b));
  if (l == 0) return 0.0;
  const double p = l / a.size(), r = l / b.size();
  return 2 * p * r / (p + r);
}

}  // namespace oracle
