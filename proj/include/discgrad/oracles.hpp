#pragma once
// Independent brute-force references the estimators are judged against:
// exact gradients by outcome enumeration, composite Gauss-Legendre quadrature
// of the single-unit relaxed objective, and streaming Monte Carlo means with
// standard errors. Everything here is deliberately simple and slow.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "discgrad/core.hpp"
#include "discgrad/model.hpp"
#include "discgrad/reparam.hpp"
#include "discgrad/rng.hpp"
#include "discgrad/tape.hpp"

namespace discgrad {

// ---------------------------------------------------------------------------
// Exact enumeration: E[f] and d/dtheta E[f] summed over every joint outcome.
// ---------------------------------------------------------------------------

struct EnumerationResult {
  double exact_objective = 0.0;
  GradVec exact_grad;
  double prob_mass = 0.0;  // diagnostic; checked against 1 before returning
};

constexpr long long kEnumerationCap = 1LL << 20;

// Sum over all 2^n outcomes of p(b) * [ grad f(b,theta) + f(b,theta) grad
// log p(b) ], which is exactly d/dtheta E[f] because grad p = p grad log p.
inline EnumerationResult exact_gradient_enum(StochasticModel& m) {
  const long long total = total_outcomes(m, kEnumerationCap);
  require(total > 0, "enumeration outcome count exceeds 2^20");

  const int layers = m.num_layers();
  Tape t;
  EnumerationResult out;
  out.exact_grad.resize(m.store().size());

  std::vector<Value> samples;
  samples.reserve((size_t)layers);
  for (long long code = 0; code < total; ++code) {
    t.reset();
    samples.clear();
    long long rem = code;
    Value prev_sample;
    Value logp;
    for (int i = 0; i < layers; ++i) {
      Value alpha = m.layer_logits(t, i, i == 0 ? nullptr : &prev_sample);
      const int n = m.units(i);
      Tensor b{Shape{(int64_t)n}};
      for (int j = 0; j < n; ++j) {
        b.data[(size_t)j] = (double)(rem & 1);
        rem >>= 1;
      }
      Value bc = t.constant(b);
      Value lp = log_prob_bernoulli(alpha, b);
      logp = (i == 0) ? lp : logp + lp;
      samples.push_back(bc);
      prev_sample = bc;
    }
    Value f = m.objective(t, samples);
    const double fv = f.scalar();
    const double p = std::exp(logp.scalar());
    out.exact_objective += p * fv;
    out.prob_mass += p;
    t.backward(f, out.exact_grad, p);
    t.backward(logp, out.exact_grad, p * fv);
  }
  require(std::abs(out.prob_mass - 1.0) <= 1e-12,
          "enumeration probabilities do not sum to 1");
  return out;
}

// ---------------------------------------------------------------------------
// Gauss-Legendre machinery.
// ---------------------------------------------------------------------------

// Nodes/weights on [-1, 1], computed by Newton iteration on the Legendre
// recurrence (no tables to mistype).
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  require(n >= 2, "gauss_legendre needs at least 2 nodes");
  x.assign((size_t)n, 0.0);
  w.assign((size_t)n, 0.0);
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double xi = std::cos(M_PI * ((double)i + 0.75) / ((double)n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = xi;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2.0 * k - 1.0) * xi * p1 - (k - 1.0) * p0) / (double)k;
        p0 = p1;
        p1 = p2;
      }
      dp = (double)n * (xi * p1 - p0) / (xi * xi - 1.0);
      double step = p1 / dp;
      xi -= step;
      if (std::abs(step) < 1e-15) break;
    }
    x[(size_t)i] = -xi;
    x[(size_t)(n - 1 - i)] = xi;
    const double wi = 2.0 / ((1.0 - xi * xi) * dp * dp);
    w[(size_t)i] = wi;
    w[(size_t)(n - 1 - i)] = wi;
  }
}

struct QuadratureResult {
  double objective = 0.0;
  GradVec grad;
};

// Deterministic replacement for the relaxed objective's Monte Carlo mean on a
// single-unit model:  E_u[ f(sigma_lambda(alpha + logit u)) ]  integrated in
// s = logit(u) space, where the integrand is f(sigma_lambda(alpha + s)) with
// logistic weight sigma'(s). Panels refine geometrically toward the
// transition point s = -alpha so near-hard temperatures stay resolved, and
// the result is accepted only if doubling the per-panel order moves it by
// less than 1e-8.
inline QuadratureResult relaxed_quadrature_1d(StochasticModel& m, double lambda,
                                              int n_points = 256) {
  require(m.num_layers() == 1 && m.units(0) == 1,
          "relaxed_quadrature_1d needs a single-layer, single-unit model");
  require(lambda > 0, "relaxed_quadrature_1d requires lambda > 0");
  require(n_points >= 64, "relaxed_quadrature_1d needs n_points >= 64");

  Tape t;
  const double alpha_num = [&] {
    t.reset();
    return m.layer_logits(t, 0, nullptr).scalar();
  }();

  // Panel breakpoints in s-space, accumulating at the transition point.
  const double S = 60.0;  // tail mass beyond |s| = 60 is ~1e-26
  const double s0 = clamp(-alpha_num, -S, S);
  const double wmin = clamp(0.25 * lambda, 1e-13, 5.0);
  std::vector<double> breaks{s0};
  for (double x = s0, step = wmin; x < S;) {
    x = std::min(x + step, S);
    breaks.push_back(x);
    step *= 1.7;
  }
  for (double x = s0, step = wmin; x > -S;) {
    x = std::max(x - step, -S);
    breaks.push_back(x);
    step *= 1.7;
  }
  std::sort(breaks.begin(), breaks.end());

  const int panels = (int)breaks.size() - 1;
  const int order = std::max(10, (n_points + panels - 1) / panels);

  auto evaluate = [&](int g) {
    std::vector<double> gx, gw;
    gauss_legendre(g, gx, gw);
    QuadratureResult r;
    r.grad.resize(m.store().size());
    for (int pi = 0; pi < panels; ++pi) {
      const double a = breaks[(size_t)pi], b = breaks[(size_t)pi + 1];
      const double mid = 0.5 * (a + b), hw = 0.5 * (b - a);
      if (hw <= 0.0) continue;
      for (int j = 0; j < g; ++j) {
        const double s = mid + hw * gx[(size_t)j];
        const double weight = hw * gw[(size_t)j] * sigmoid(s) * sigmoid(-s);
        t.reset();
        Value alpha = m.layer_logits(t, 0, nullptr);
        Value soft = relax(alpha + s, lambda);
        Value f = m.objective(t, std::span<const Value>(&soft, 1));
        r.objective += weight * f.scalar();
        t.backward(f, r.grad, weight);
      }
    }
    return r;
  };

  QuadratureResult coarse = evaluate(order);
  QuadratureResult fine = evaluate(2 * order);
  double diff = std::abs(coarse.objective - fine.objective);
  for (size_t i = 0; i < fine.grad.slots.size(); ++i) {
    if (fine.grad.slots[i].data.empty()) continue;
    for (size_t k = 0; k < fine.grad.slots[i].data.size(); ++k) {
      const double c = coarse.grad.set(i) ? coarse.grad.slots[i].data[k] : 0.0;
      diff = std::max(diff, std::abs(c - fine.grad.slots[i].data[k]));
    }
  }
  require(diff < 1e-8, "quadrature did not converge when doubling the order");
  return fine;
}

// Golden-section minimizer for smooth 1-d objectives on [lo, hi].
template <class F>
double golden_section_min(F&& f, double lo, double hi, int iters = 200) {
  require(lo < hi, "golden_section_min needs lo < hi");
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < iters && (b - a) > 1e-12; ++i) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

// ---------------------------------------------------------------------------
// Streaming Monte Carlo means.
// ---------------------------------------------------------------------------

// Welford accumulator with Chan's merge, so samples can be processed in
// fixed-size chunks and reduced in a fixed order regardless of how the chunks
// were scheduled.
struct MeanAccumulator {
  int64_t count = 0;
  std::vector<double> mean, m2;

  void init(size_t dim) {
    count = 0;
    mean.assign(dim, 0.0);
    m2.assign(dim, 0.0);
  }
  void add(const double* x, size_t dim) {
    if (mean.empty()) init(dim);
    require(mean.size() == dim, "mc_mean sample dimension changed mid-stream");
    ++count;
    for (size_t i = 0; i < dim; ++i) {
      require(std::isfinite(x[i]), "mc_mean received a non-finite sample");
      const double d = x[i] - mean[i];
      mean[i] += d / (double)count;
      m2[i] += d * (x[i] - mean[i]);
    }
  }
  void merge(const MeanAccumulator& o) {
    if (o.count == 0) return;
    if (count == 0) {
      *this = o;
      return;
    }
    require(mean.size() == o.mean.size(), "mc_mean merge dimension mismatch");
    const double na = (double)count, nb = (double)o.count;
    for (size_t i = 0; i < mean.size(); ++i) {
      const double d = o.mean[i] - mean[i];
      mean[i] += d * nb / (na + nb);
      m2[i] += o.m2[i] + d * d * na * nb / (na + nb);
    }
    count += o.count;
  }
};

struct McResult {
  int64_t n = 0;
  Tensor mean;
  Tensor stderr_of_mean;
};

// Streaming mean / standard error of a vector-valued sampler over n draws.
// Samples are generated in fixed 4096-draw chunks, each from its own forked
// stream, and the chunk accumulators merge in index order — the reduction is
// identical no matter how chunks would be scheduled across workers.
template <class Fn>
McResult mc_mean(Fn&& sample, int64_t n, const RngStream& base) {
  require(n >= 10000, "mc_mean needs at least 1e4 samples");
  constexpr int64_t kChunk = 4096;
  MeanAccumulator total;
  for (int64_t chunk = 0, done = 0; done < n; ++chunk) {
    const int64_t take = std::min(kChunk, n - done);
    RngStream rng = base.fork((uint64_t)chunk);
    MeanAccumulator acc;
    for (int64_t i = 0; i < take; ++i) {
      Tensor s = sample(rng);
      acc.add(s.data.data(), s.data.size());
    }
    total.merge(acc);
    done += take;
  }
  McResult out;
  out.n = total.count;
  const auto dim = (int64_t)total.mean.size();
  out.mean = Tensor{Shape{dim}, total.mean};
  out.stderr_of_mean = Tensor{Shape{dim}};
  for (size_t i = 0; i < total.m2.size(); ++i) {
    const double var = total.m2[i] / std::max<int64_t>(1, total.count - 1);
    out.stderr_of_mean.data[i] = std::sqrt(std::max(0.0, var) / (double)total.count);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hypothesis-test plumbing for the unbiasedness suites.
// ---------------------------------------------------------------------------

// Upper quantile of the standard normal: the z with P(Z > z) = p.
inline double normal_upper_quantile(double p) {
  require(p > 0.0 && p < 0.5, "normal_upper_quantile needs p in (0, 0.5)");
  double lo = 0.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (0.5 * std::erfc(mid / std::sqrt(2.0)) > p) lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

// Per-component acceptance threshold in combined standard errors: at least 4,
// widened by a Bonferroni correction so the whole suite's false-failure
// probability stays near 1e-3.
inline double unbiasedness_threshold(int64_t comparisons, double suite_alpha = 1e-3) {
  require(comparisons >= 1, "unbiasedness_threshold needs >= 1 comparison");
  const double per = suite_alpha / (2.0 * (double)comparisons);
  return std::max(4.0, normal_upper_quantile(per));
}

}  // namespace discgrad
