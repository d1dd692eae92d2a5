#pragma once
// Central finite-difference gradients: the independent oracle used to verify
// every differentiable code path in this library.

#include <functional>
#include <vector>

#include "core.hpp"

namespace discgrad {

// f maps a flat coordinate vector to a scalar. Step is scaled per coordinate.
inline std::vector<double> finite_diff_gradient(const std::function<double(const std::vector<double>&)>& f,
                                                std::vector<double> x, double h = 1e-5) {
  require(h > 0, "finite_diff_gradient requires h > 0");
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    double xi = x[i];
    double step = h * std::max(1.0, std::abs(xi));
    x[i] = xi + step;
    double fp = f(x);
    x[i] = xi - step;
    double fm = f(x);
    x[i] = xi;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

// Agreement metric used throughout the tests: absolute difference scaled by
// the larger magnitude, floored at 1 so that near-zero pairs compare absolutely.
inline double rel_err(double a, double b) {
  double denom = std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) / denom;
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size(), "max_rel_err size mismatch");
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i]));
  return m;
}

}  // namespace discgrad
