#pragma once
// Reparameterizations for Bernoulli latents: logistic sampling z = alpha +
// logit(u), hard thresholding, tempered sigmoid relaxation, the conditional
// z | b, common-random-number coupling between the two, and the modified
// relaxation whose temperature limit recovers a mean-field control variate.
//
// Convention: u, v, b enter as plain tensors (noise/constants); alpha (the
// Bernoulli logits) is a tape value, so every returned tape expression is
// differentiable with respect to alpha.

#include "core.hpp"
#include "rng.hpp"
#include "tape.hpp"

namespace discgrad {

inline Tensor draw_uniform(RngStream& rng, int64_t n) {
  Tensor t{Shape{n}};
  for (auto& x : t.data) x = rng.uniform();
  return t;
}

inline Tensor logit_tensor(const Tensor& u) {
  Tensor t{u.shape};
  for (size_t i = 0; i < u.data.size(); ++i) t.data[i] = logit(clamp(u.data[i], 1e-12, 1.0 - 1e-12));
  return t;
}

// z = alpha + logit(u); z >= 0 iff the unit fires.
inline Value sample_z(Value alpha, const Tensor& u) {
  require(alpha.shape == u.shape, "sample_z shape mismatch");
  return alpha + alpha.tape->constant(logit_tensor(u));
}

// H(z) with the tie H(0) = 1.
inline Tensor hard_threshold(const Tensor& z) {
  Tensor b{z.shape};
  for (size_t i = 0; i < z.data.size(); ++i) b.data[i] = (z.data[i] >= 0.0) ? 1.0 : 0.0;
  return b;
}

// sigma(z / lambda), elementwise.
inline Value relax(Value z, double lambda) {
  require(lambda > 0, "relax requires lambda > 0");
  return sigmoid(z * (1.0 / lambda));
}
inline Value relax(Value z, Value lambda) {
  require(lambda.shape.rank == 0, "relax lambda must be scalar");
  Value lam = z.shape.rank == 0 ? lambda : broadcast_to(lambda, z.shape);
  return sigmoid(z / lam);
}

// Sample of z | b via v ~ U(0,1). With w = logit(v) and s = 2b - 1:
//   z~ = s * log(exp(w) + exp(w + s*alpha) + 1)
// evaluated in shifted log-sum-exp form so extreme logits stay finite.
// z~ >= 0 exactly when b = 1.
inline Value conditional_z(Value alpha, const Tensor& b, const Tensor& v) {
  require(alpha.shape == b.shape && alpha.shape == v.shape, "conditional_z shape mismatch");
  Tape& t = *alpha.tape;
  Tensor w = logit_tensor(v);
  Tensor sgn{b.shape};
  for (size_t i = 0; i < b.data.size(); ++i) sgn.data[i] = 2.0 * b.data[i] - 1.0;

  Value x2 = t.constant(w) + t.constant(sgn) * alpha;
  Tensor x2v = x2.value();
  Tensor shift{w.shape};
  Tensor rest{w.shape};  // exp(w - M) + exp(-M), both constants
  for (size_t i = 0; i < w.data.size(); ++i) {
    double m = std::max({w.data[i], x2v.data[i], 0.0});
    shift.data[i] = m;
    rest.data[i] = std::exp(w.data[i] - m) + std::exp(-m);
  }
  Value lse = t.constant(shift) + log(exp(x2 - t.constant(shift)) + t.constant(rest));
  return t.constant(sgn) * lse;
}

struct Coupled {
  Tensor v;
  Tensor b;
};

// Common-random-number coupling: from the u that produced b = H(g(u, theta)),
// build v so that the conditional map reproduces z exactly:
//   b = 1: v = (u - (1-theta)) / theta,  b = 0: v = (1-theta-u) / (1-theta).
// Then conditional_z(v, b) == sample_z(u) identically (algebraic inversion of
// the closed-form conditional), and v is U(0,1) independent of b.
inline Coupled couple_uv(const Tensor& u, const Tensor& theta) {
  require(u.shape == theta.shape, "couple_uv shape mismatch");
  Coupled out{Tensor{u.shape}, Tensor{u.shape}};
  for (size_t i = 0; i < u.data.size(); ++i) {
    double th = theta.data[i];
    double up = 1.0 - th;
    if (u.data[i] >= up) {
      out.b.data[i] = 1.0;
      out.v.data[i] = clamp((u.data[i] - up) / th, 1e-12, 1.0 - 1e-12);
    } else {
      out.b.data[i] = 0.0;
      out.v.data[i] = clamp((up - u.data[i]) / up, 1e-12, 1.0 - 1e-12);
    }
  }
  return out;
}

// log p(b; alpha) = sum_i [ b_i log sigma(alpha_i) + (1-b_i) log sigma(-alpha_i) ],
// in softplus form. d/dalpha = b - sigma(alpha), exactly.
inline Value log_prob_bernoulli(Value alpha, const Tensor& b) {
  require(alpha.shape == b.shape, "log_prob_bernoulli shape mismatch");
  Tape& t = *alpha.tape;
  Value sp_pos = softplus(alpha);
  Value sp_neg = softplus(-alpha);
  return -sum(select(t.constant(b), sp_neg, sp_pos));
}

// Bilinear form sum_i [ b_i alpha_i - softplus(alpha_i) ]: identical to the
// hard overload at b in {0,1} and the natural relaxation for b in (0,1),
// differentiable in both arguments (d/dalpha = b - sigma(alpha) exactly,
// d/db = alpha).
inline Value log_likelihood_bernoulli(Value alpha, Value b) {
  require(alpha.shape == b.shape, "log_likelihood_bernoulli shape mismatch");
  return sum(b * alpha - softplus(alpha));
}

// Temperature multiplier of the modified relaxation. m(lambda) -> 1 as
// lambda -> 0 (recovering the plain relaxation) and m(lambda)/lambda -> 1 as
// lambda -> infinity (so sigma(z_mod / lambda) -> sigma(alpha) = theta).
inline double modified_multiplier(double lambda) {
  return (lambda * lambda + lambda + 1.0) / (lambda + 1.0);
}

// z_mod = m(lambda) * alpha + logit(u) = z + (m - 1) * alpha. The hard sample
// stays b = H(z) with the unmodified z; only the relaxed paths shift.
inline Value sample_z_modified(Value alpha, const Tensor& u, double lambda) {
  double m = modified_multiplier(lambda);
  return alpha * m + alpha.tape->constant(logit_tensor(u));
}

// Conditional counterpart: the law of z_mod | b is the law of z | b shifted
// by (m - 1) * alpha, since z_mod - z is deterministic given alpha.
inline Value conditional_z_modified(Value alpha, const Tensor& b, const Tensor& v, double lambda) {
  double m = modified_multiplier(lambda);
  return conditional_z(alpha, b, v) + alpha * (m - 1.0);
}

struct Temperature {
  double psi = std::log(0.1);
  double lambda() const { return std::exp(psi); }
  static Temperature from_lambda(double lam) {
    require(lam > 0, "temperature must be positive");
    return Temperature{std::log(lam)};
  }
};

}  // namespace discgrad
