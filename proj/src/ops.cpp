#include "w2st/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <string>

#include "w2st/graph.hpp"

namespace w2st {

namespace {

Graph* tracking(std::initializer_list<const Tensor*> inputs) {
  Graph* g = active_graph();
  if (!g) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return g;
  }
  return nullptr;
}

Tensor finish(Tensor out, const char* name) {
  out.check_finite(name);
  return out;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + " expects rank " + std::to_string(rank) +
                     ", got " + shape_str(t.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

}  // namespace

AttentionMask AttentionMask::causal(std::size_t n) {
  AttentionMask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c <= r; ++c) m.allowed[r * n + c] = 1;
  }
  return m;
}

AttentionMask AttentionMask::all(std::size_t rows, std::size_t cols) {
  return {rows, cols, std::vector<std::uint8_t>(rows * cols, 1)};
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  {
    auto A = a.data();
    auto B = b.data();
    auto C = out.data();
    for (std::size_t i = 0; i < m; ++i) {
      float* crow = &C[i * n];
      for (std::size_t p = 0; p < k; ++p) {
        const float av = A[i * k + p];
        const float* brow = &B[p * n];
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
  finish(out, "matmul");
  if (Graph* g = tracking({&a, &b})) {
    out.set_requires_grad(true);
    g->record(out, [a, b, out, m, k, n]() mutable {
      auto G = out.grad();
      if (a.requires_grad()) {
        auto B = b.data();
        auto dA = a.mutable_grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            float acc = 0.0f;
            for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
            dA[i * k + p] += acc;
          }
        }
      }
      if (b.requires_grad()) {
        auto A = a.data();
        auto dB = b.mutable_grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const float av = A[i * k + p];
            for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += av * G[i * n + j];
          }
        }
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor out = Tensor::zeros({c, r});
  auto X = a.data();
  auto Y = out.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) Y[j * r + i] = X[i * c + j];
  if (Graph* g = tracking({&a})) {
    out.set_requires_grad(true);
    g->record(out, [a, out, r, c]() mutable {
      auto G = out.grad();
      auto dX = a.mutable_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) dX[i * c + j] += G[j * r + i];
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  auto A = a.data();
  auto B = b.data();
  auto Y = out.data();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = A[i] + B[i];
  finish(out, "add");
  if (Graph* g = tracking({&a, &b})) {
    out.set_requires_grad(true);
    g->record(out, [a, b, out]() mutable {
      auto G = out.grad();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto d = t->mutable_grad();
        for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i];
      }
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_bias");
  const std::size_t n = x.dim(0), m = x.dim(1);
  if (bias.rank() != 1 || bias.dim(0) != m) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not fit " +
                     shape_str(x.shape()));
  }
  Tensor out = x.clone();
  out.set_requires_grad(false);
  auto Y = out.data();
  auto Bv = bias.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) Y[i * m + j] += Bv[j];
  finish(out, "add_bias");
  if (Graph* g = tracking({&x, &bias})) {
    out.set_requires_grad(true);
    g->record(out, [x, bias, out, n, m]() mutable {
      auto G = out.grad();
      if (x.requires_grad()) {
        auto d = x.mutable_grad();
        for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i];
      }
      if (bias.requires_grad()) {
        auto d = bias.mutable_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) d[j] += G[i * m + j];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  auto A = a.data();
  auto B = b.data();
  auto Y = out.data();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = A[i] * B[i];
  finish(out, "mul");
  if (Graph* g = tracking({&a, &b})) {
    out.set_requires_grad(true);
    g->record(out, [a, b, out]() mutable {
      auto G = out.grad();
      auto A = a.data();
      auto B = b.data();
      if (a.requires_grad()) {
        auto d = a.mutable_grad();
        for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i] * B[i];
      }
      if (b.requires_grad()) {
        auto d = b.mutable_grad();
        for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i] * A[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, float factor) {
  Tensor out = Tensor::zeros(x.shape());
  auto X = x.data();
  auto Y = out.data();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = X[i] * factor;
  finish(out, "scale");
  if (Graph* g = tracking({&x})) {
    out.set_requires_grad(true);
    g->record(out, [x, out, factor]() mutable {
      auto G = out.grad();
      auto d = x.mutable_grad();
      for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i] * factor;
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  auto X = x.data();
  auto Y = out.data();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = X[i] > 0.0f ? X[i] : 0.0f;
  if (Graph* g = tracking({&x})) {
    out.set_requires_grad(true);
    g->record(out, [x, out]() mutable {
      auto G = out.grad();
      auto X = x.data();
      auto d = x.mutable_grad();
      for (std::size_t i = 0; i < G.size(); ++i) {
        if (X[i] > 0.0f) d[i] += G[i];
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  Tensor out = finish(Tensor::scalar(static_cast<float>(acc)), "sum");
  if (Graph* g = tracking({&x})) {
    out.set_requires_grad(true);
    g->record(out, [x, out]() mutable {
      const float go = out.grad()[0];
      for (float& d : x.mutable_grad()) d += go;
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];

  Tensor out = Tensor::zeros(s);
  auto X = x.data();
  auto Y = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * len * inner + j;
      float mx = X[base];
      for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, X[base + i * inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        const float e = std::exp(X[base + i * inner] - mx);
        Y[base + i * inner] = e;
        z += e;
      }
      const float inv = static_cast<float>(1.0 / z);
      for (std::size_t i = 0; i < len; ++i) Y[base + i * inner] *= inv;
    }
  }
  finish(out, "softmax");
  if (Graph* g = tracking({&x})) {
    out.set_requires_grad(true);
    g->record(out, [x, out, outer, inner, len]() mutable {
      auto G = out.grad();
      auto Y = out.data();
      auto d = x.mutable_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t j = 0; j < inner; ++j) {
          const std::size_t base = o * len * inner + j;
          double dot = 0.0;
          for (std::size_t i = 0; i < len; ++i) {
            dot += static_cast<double>(G[base + i * inner]) * Y[base + i * inner];
          }
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t at = base + i * inner;
            d[at] += Y[at] * (G[at] - static_cast<float>(dot));
          }
        }
      }
    });
  }
  return out;
}

Tensor masked_softmax(const Tensor& x, const AttentionMask& mask) {
  require_rank(x, 2, "masked_softmax");
  const std::size_t n = x.dim(0), m = x.dim(1);
  if (mask.rows != n || mask.cols != m) {
    throw ShapeError("masked_softmax: mask [" + std::to_string(mask.rows) + "x" +
                     std::to_string(mask.cols) + "] does not fit " + shape_str(x.shape()));
  }
  Tensor out = Tensor::zeros({n, m});
  auto X = x.data();
  auto Y = out.data();
  for (std::size_t r = 0; r < n; ++r) {
    float mx = 0.0f;
    bool any = false;
    for (std::size_t c = 0; c < m; ++c) {
      if (!mask(r, c)) continue;
      mx = any ? std::max(mx, X[r * m + c]) : X[r * m + c];
      any = true;
    }
    if (!any) {
      throw std::invalid_argument("attention mask leaves query row " + std::to_string(r) +
                                  " with no visible key");
    }
    double z = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      if (!mask(r, c)) continue;
      const float e = std::exp(X[r * m + c] - mx);
      Y[r * m + c] = e;
      z += e;
    }
    const float inv = static_cast<float>(1.0 / z);
    for (std::size_t c = 0; c < m; ++c) Y[r * m + c] *= inv;
  }
  finish(out, "masked_softmax");
  if (Graph* g = tracking({&x})) {
    out.set_requires_grad(true);
    g->record(out, [x, out, n, m]() mutable {
      auto G = out.grad();
      auto Y = out.data();
      auto d = x.mutable_grad();
      for (std::size_t r = 0; r < n; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < m; ++c) dot += static_cast<double>(G[r * m + c]) * Y[r * m + c];
        // Masked entries have Y == 0 and so receive no gradient.
        for (std::size_t c = 0; c < m; ++c) {
          d[r * m + c] += Y[r * m + c] * (G[r * m + c] - static_cast<float>(dot));
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                     shape_str(bias.shape()) + " do not fit " + shape_str(x.shape()));
  }
  Tensor out = Tensor::zeros({n, d});
  std::vector<float> xhat(n * d);
  std::vector<float> rstd(n);
  auto X = x.data();
  auto Gn = gain.data();
  auto Bv = bias.data();
  auto Y = out.data();
  for (std::size_t r = 0; r < n; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += X[r * d + c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double dev = X[r * d + c] - mean;
      var += dev * dev;
    }
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = static_cast<float>(rs);
    for (std::size_t c = 0; c < d; ++c) {
      const float h = static_cast<float>((X[r * d + c] - mean) * rs);
      xhat[r * d + c] = h;
      Y[r * d + c] = h * Gn[c] + Bv[c];
    }
  }
  finish(out, "layer_norm");
  if (Graph* g = tracking({&x, &gain, &bias})) {
    out.set_requires_grad(true);
    g->record(out, [x, gain, bias, out, xhat = std::move(xhat), rstd = std::move(rstd), n,
                    d]() mutable {
      auto G = out.grad();
      auto Gn = gain.data();
      if (gain.requires_grad()) {
        auto dg = gain.mutable_grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < d; ++c) dg[c] += G[r * d + c] * xhat[r * d + c];
      }
      if (bias.requires_grad()) {
        auto db = bias.mutable_grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < d; ++c) db[c] += G[r * d + c];
      }
      if (x.requires_grad()) {
        auto dx = x.mutable_grad();
        for (std::size_t r = 0; r < n; ++r) {
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            const double dh = static_cast<double>(G[r * d + c]) * Gn[c];
            mean_dh += dh;
            mean_dh_h += dh * xhat[r * d + c];
          }
          mean_dh /= static_cast<double>(d);
          mean_dh_h /= static_cast<double>(d);
          for (std::size_t c = 0; c < d; ++c) {
            const double dh = static_cast<double>(G[r * d + c]) * Gn[c];
            dx[r * d + c] +=
                static_cast<float>(rstd[r] * (dh - mean_dh - xhat[r * d + c] * mean_dh_h));
          }
        }
      }
    });
  }
  return out;
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_rank(table, 2, "embedding");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  if (ids.empty()) throw ShapeError("embedding: empty id sequence");
  std::vector<int> rows(ids.begin(), ids.end());
  for (int id : rows) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw std::out_of_range("embedding: id " + std::to_string(id) + " outside table of " +
                              std::to_string(vocab) + " rows");
    }
  }
  Tensor out = Tensor::zeros({rows.size(), d});
  auto T = table.data();
  auto Y = out.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(&T[static_cast<std::size_t>(rows[i]) * d], d, &Y[i * d]);
  }
  if (Graph* g = tracking({&table})) {
    out.set_requires_grad(true);
    g->record(out, [table, out, rows = std::move(rows), d]() mutable {
      auto G = out.grad();
      auto dT = table.mutable_grad();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        float* dst = &dT[static_cast<std::size_t>(rows[i]) * d];
        for (std::size_t c = 0; c < d; ++c) dst[c] += G[i * d + c];
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t width) {
  require_rank(x, 2, "slice_cols");
  const std::size_t n = x.dim(0), m = x.dim(1);
  if (width == 0 || start + width > m) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " +
                     std::to_string(start + width) + ") outside " + shape_str(x.shape()));
  }
  Tensor out = Tensor::zeros({n, width});
  auto X = x.data();
  auto Y = out.data();
  for (std::size_t r = 0; r < n; ++r) std::copy_n(&X[r * m + start], width, &Y[r * width]);
  if (Graph* g = tracking({&x})) {
    out.set_requires_grad(true);
    g->record(out, [x, out, n, m, start, width]() mutable {
      auto G = out.grad();
      auto d = x.mutable_grad();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < width; ++c) d[r * m + start + c] += G[r * width + c];
    });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = parts[0].dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != n) {
      throw ShapeError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    total += p.dim(1);
  }
  Tensor out = Tensor::zeros({n, total});
  auto Y = out.data();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    auto X = p.data();
    for (std::size_t r = 0; r < n; ++r) std::copy_n(&X[r * w], w, &Y[r * total + offset]);
    offset += w;
  }
  Graph* g = active_graph();
  const bool any = std::any_of(parts.begin(), parts.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (g && any) {
    out.set_requires_grad(true);
    std::vector<Tensor> saved(parts.begin(), parts.end());
    g->record(out, [saved = std::move(saved), out, n, total]() mutable {
      auto G = out.grad();
      std::size_t offset = 0;
      for (auto& p : saved) {
        const std::size_t w = p.dim(1);
        if (p.requires_grad()) {
          auto d = p.mutable_grad();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < w; ++c) d[r * w + c] += G[r * total + offset + c];
        }
        offset += w;
      }
    });
  }
  return out;
}

std::vector<float> log_softmax_row(std::span<const float> logits) {
  if (logits.empty()) throw ShapeError("log_softmax_row: empty row");
  const float mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (float v : logits) z += std::exp(static_cast<double>(v) - mx);
  const double lse = mx + std::log(z);
  std::vector<float> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = static_cast<float>(static_cast<double>(logits[i]) - lse);
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_index,
                     Reduction reduction) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.dim(0), v = logits.dim(1);
  if (targets.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     shape_str(logits.shape()) + " logits");
  }
  std::size_t counted = 0;
  for (int t : targets) {
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) +
                              " outside vocabulary of " + std::to_string(v));
    }
    ++counted;
  }
  if (counted == 0) {
    throw std::invalid_argument("cross_entropy: every position is ignored");
  }
  auto X = logits.data();
  std::vector<float> probs(n * v, 0.0f);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] == ignore_index) continue;
    const float* row = &X[r * v];
    const float mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t c = 0; c < v; ++c) z += std::exp(static_cast<double>(row[c]) - mx);
    const double lse = mx + std::log(z);
    total += lse - row[targets[r]];
    for (std::size_t c = 0; c < v; ++c) {
      probs[r * v + c] = static_cast<float>(std::exp(static_cast<double>(row[c]) - lse));
    }
  }
  const float norm = reduction == Reduction::kMean ? 1.0f / static_cast<float>(counted) : 1.0f;
  Tensor out = finish(Tensor::scalar(static_cast<float>(total * norm)), "cross_entropy");
  if (Graph* g = tracking({&logits})) {
    out.set_requires_grad(true);
    std::vector<int> tgt(targets.begin(), targets.end());
    g->record(out, [logits, out, probs = std::move(probs), tgt = std::move(tgt), n, v, norm,
                    ignore_index]() mutable {
      const float go = out.grad()[0] * norm;
      auto d = logits.mutable_grad();
      for (std::size_t r = 0; r < n; ++r) {
        if (tgt[r] == ignore_index) continue;
        for (std::size_t c = 0; c < v; ++c) d[r * v + c] += go * probs[r * v + c];
        d[r * v + static_cast<std::size_t>(tgt[r])] -= go;
      }
    });
  }
  return out;
}

}  // namespace w2st
