#pragma once
// Categorical sampling via Gumbel-max and its conditional: given the winning
// category k, the remaining coordinates are truncated Gumbels below the
// winner's value. Plain-double utilities; the categorical path is provided
// standalone and is not wired into the Bernoulli estimators.

#include <vector>

#include "core.hpp"
#include "rng.hpp"

namespace discgrad {

struct GumbelSample {
  std::vector<double> z;  // perturbed log-probabilities
  int argmax = 0;
};

inline void require_simplex(const std::vector<double>& p) {
  require(p.size() >= 2, "categorical requires at least 2 categories");
  double s = 0.0;
  for (double x : p) {
    require(x > 0.0, "categorical probabilities must be strictly positive");
    s += x;
  }
  require(std::abs(s - 1.0) <= 1e-9, "categorical probabilities must sum to 1");
}

// z_i = log p_i - log(-log u_i); ties resolve to the lowest index.
inline GumbelSample gumbel_max_sample(const std::vector<double>& p, const std::vector<double>& u) {
  require_simplex(p);
  require(u.size() == p.size(), "gumbel_max_sample size mismatch");
  GumbelSample out;
  out.z.resize(p.size());
  for (size_t i = 0; i < p.size(); ++i) {
    double ui = clamp(u[i], 1e-12, 1.0 - 1e-12);
    out.z[i] = std::log(p[i]) - std::log(-std::log(ui));
    if (out.z[i] > out.z[(size_t)out.argmax]) out.argmax = (int)i;
  }
  return out;
}

// Conditional draw of the perturbed vector given argmax = k:
//   z~_k = -log(-log v_k)
//   z~_i = -log( (-log v_i) / p_i + (-log v_k) ),  i != k
// so z~_i <= z~_k always, and z~_i | z~_k follows the Gumbel(log p_i)
// distribution truncated at z~_k.
inline std::vector<double> truncated_gumbel_conditional(const std::vector<double>& p, int k,
                                                        const std::vector<double>& v) {
  require_simplex(p);
  require(k >= 0 && (size_t)k < p.size(), "truncated_gumbel_conditional: hot index out of range");
  require(v.size() == p.size(), "truncated_gumbel_conditional size mismatch");
  std::vector<double> z(p.size());
  double ek = -std::log(clamp(v[(size_t)k], 1e-12, 1.0 - 1e-12));  // exp(-z~_k)
  z[(size_t)k] = -std::log(ek);
  for (size_t i = 0; i < p.size(); ++i) {
    if ((int)i == k) continue;
    double ei = -std::log(clamp(v[i], 1e-12, 1.0 - 1e-12));
    z[i] = -std::log(ei / p[i] + ek);
  }
  return z;
}

// CDF of Gumbel with location mu: P(Z <= z) = exp(-exp(-(z - mu))).
inline double gumbel_cdf(double z, double mu) { return std::exp(-std::exp(-(z - mu))); }

}  // namespace discgrad
