#include "w2st/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "w2st/graph.hpp"

namespace w2st {

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.pass; });
}

std::vector<std::size_t> GradCheckReport::failing() const {
  std::vector<std::size_t> out;
  for (const auto& e : entries) {
    if (!e.pass) out.push_back(e.index);
  }
  return out;
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << entries.size() << " coords, max rel error " << max_rel_error;
  const auto bad = failing();
  if (!bad.empty()) {
    os << ", failing:";
    for (std::size_t i = 0; i < std::min<std::size_t>(bad.size(), 8); ++i) os << ' ' << bad[i];
    if (bad.size() > 8) os << " ...";
  }
  return os.str();
}

namespace {

double eval(const ScalarFn& f) {
  NoGradScope no_grad;
  const Tensor y = f();
  const double v = y.item();
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite function value");
  return v;
}

}  // namespace

GradCheckReport finite_diff_check(const ScalarFn& f, Tensor x, std::span<const float> analytic,
                                  double h, double tol, std::size_t max_coords) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
  if (analytic.size() != x.numel()) {
    throw ShapeError("finite_diff_check: analytic gradient size mismatch");
  }
  const std::size_t n = x.numel();
  const std::size_t stride = (max_coords == 0 || max_coords >= n) ? 1 : n / max_coords;

  GradCheckReport report;
  auto values = x.data();
  for (std::size_t i = 0; i < n; i += stride) {
    const float saved = values[i];
    values[i] = static_cast<float>(saved + h);
    const double up = eval(f);
    values[i] = static_cast<float>(saved - h);
    const double down = eval(f);
    values[i] = saved;
    // Use the step actually representable in float.
    const double step = static_cast<double>(static_cast<float>(saved + h)) -
                        static_cast<double>(static_cast<float>(saved - h));
    GradCheckEntry e;
    e.index = i;
    e.analytic = analytic[i];
    e.numeric = (up - down) / step;
    const double denom = std::max({1.0, std::abs(e.analytic), std::abs(e.numeric)});
    e.rel_error = std::abs(e.analytic - e.numeric) / denom;
    e.pass = e.rel_error <= tol;
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.entries.push_back(e);
  }
  return report;
}

GradCheckReport finite_diff_check(const ScalarFn& f, Tensor x, double h, double tol,
                                  std::size_t max_coords) {
  const bool tracked = x.requires_grad();
  x.set_requires_grad(true);
  x.drop_grad();
  std::vector<float> analytic;
  {
    Graph graph;
    Tensor loss;
    {
      GraphScope scope(graph);
      loss = f();
    }
    if (!std::isfinite(loss.item())) {
      throw NumericError("finite_diff_check: non-finite function value");
    }
    if (loss.requires_grad()) graph.backward(loss);
    if (x.has_grad()) {
      analytic.assign(x.grad().begin(), x.grad().end());
    } else {
      analytic.assign(x.numel(), 0.0f);
    }
  }
  x.set_requires_grad(tracked);
  return finite_diff_check(f, x, analytic, h, tol, max_coords);
}

}  // namespace w2st
