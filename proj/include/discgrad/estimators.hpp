#pragma once
// Gradient estimators for objectives E_{p(b|θ)}[f(b, θ)] over layered Bernoulli
// latents: the score-function estimator, its baselined variants, mean-field
// control variates, the pure relaxation, and relaxation-based control variates
// with online adaptation of the temperature and the per-group scalings.
//
// Every estimator consumes a Draws bundle (raw uniforms, one tensor per layer)
// so that probe estimators can share the exact noise of a driver, and returns a
// GradEstimate whose `grads` entry is the single-sample estimate r. Estimators
// with a scaled control variate also expose the decomposition r = a − η ∘ c
// through `cv_grads` (= c on the score-bearing parameter slots), which is what
// the online η update consumes.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "core.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "params.hpp"
#include "reparam.hpp"
#include "rng.hpp"
#include "tape.hpp"

namespace discgrad {

enum class EstimatorKind {
  reinforce,
  nvil,
  muprop,
  simple_muprop,
  concrete,
  rebar,
  rebar_modified,
  rebar_alt,
  rebar_multilayer,
  rebar_coupled_multilayer,
};

inline const char* estimator_kind_name(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::reinforce: return "reinforce";
    case EstimatorKind::nvil: return "nvil";
    case EstimatorKind::muprop: return "muprop";
    case EstimatorKind::simple_muprop: return "simple_muprop";
    case EstimatorKind::concrete: return "concrete";
    case EstimatorKind::rebar: return "rebar";
    case EstimatorKind::rebar_modified: return "rebar_modified";
    case EstimatorKind::rebar_alt: return "rebar_alt";
    case EstimatorKind::rebar_multilayer: return "rebar_multilayer";
    case EstimatorKind::rebar_coupled_multilayer: return "rebar_coupled_multilayer";
  }
  return "?";
}

inline EstimatorKind parse_estimator_kind(const std::string& s) {
  for (EstimatorKind k : {EstimatorKind::reinforce, EstimatorKind::nvil, EstimatorKind::muprop,
                          EstimatorKind::simple_muprop, EstimatorKind::concrete, EstimatorKind::rebar,
                          EstimatorKind::rebar_modified, EstimatorKind::rebar_alt,
                          EstimatorKind::rebar_multilayer, EstimatorKind::rebar_coupled_multilayer})
    if (s == estimator_kind_name(k)) return k;
  fail("unknown estimator kind '" + s + "'");
}

inline bool is_rebar_family(EstimatorKind k) {
  return k == EstimatorKind::rebar || k == EstimatorKind::rebar_modified ||
         k == EstimatorKind::rebar_alt || k == EstimatorKind::rebar_multilayer ||
         k == EstimatorKind::rebar_coupled_multilayer;
}

// Estimators whose control variate carries a learned per-group scaling.
inline bool has_cv_scaling(EstimatorKind k) {
  return k == EstimatorKind::muprop || k == EstimatorKind::simple_muprop || is_rebar_family(k);
}

inline bool is_unbiased_kind(EstimatorKind k) { return k != EstimatorKind::concrete; }

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::rebar;
  double lambda_init = 0.1;
  double eta_init = 1.0;
  bool adapt_lambda = false;
  bool adapt_eta = true;
  double lambda_fd_step = 1e-3;  // central step in psi = log(lambda)
  bool use_baseline = false;     // input-dependent baseline for unbiased kinds
  int baseline_hidden = 100;
  bool couple = true;  // conditional noise from common random numbers (else d.v)
};

// Raw per-layer noise. `u` drives the sample; `v` is only consumed when the
// common-random-number coupling is disabled, but is always populated so the
// stream layout does not depend on the estimator configuration.
struct Draws {
  std::vector<Tensor> u;
  std::vector<Tensor> v;
};

inline Draws make_draws(StochasticModel& m, RngStream& rng) {
  Draws d;
  const int L = m.num_layers();
  for (int i = 0; i < L; ++i) d.u.push_back(draw_uniform(rng, m.units(i)));
  for (int i = 0; i < L; ++i) d.v.push_back(draw_uniform(rng, m.units(i)));
  return d;
}

struct GradEstimate {
  GradVec grads;      // the estimate r, indexed by model parameter id
  GradVec cv_grads;   // c in r = a − η ∘ c on tracked slots (zero elsewhere)
  GradVec aux_grads;  // baseline regression gradient, indexed by aux id
  double objective = 0.0;        // f at the hard sample
  double learning_signal = 0.0;  // score bracket, mean-η view (diagnostic)
  double cv_value = 0.0;         // scalar control-variate evaluation
};

class Estimator {
 public:
  Estimator(StochasticModel& model, const EstimatorConfig& cfg, const AdamConfig& opt,
            RngStream& init_rng)
      : model_(model), cfg_(cfg), aux_opt_(aux_, opt) {
    require(cfg.lambda_init > 0, "temperature must be positive");
    require(std::isfinite(cfg.eta_init), "control-variate scaling must be finite");
    require(cfg.lambda_fd_step > 0 && cfg.lambda_fd_step <= 0.1,
            "temperature finite-difference step must be in (0, 0.1]");
    msize_ = (int)model.store().size();
    tracked_ = model.tracked_param_ids();
    require(!tracked_.empty(), "model exposes no score-bearing parameters");
    for (int id : tracked_) require(id >= 0 && id < msize_, "tracked parameter id out of range");

    if (has_cv_scaling(cfg.kind))
      eta_id_ = aux_.add("eta", Tensor::full(Shape{(int64_t)tracked_.size()}, cfg.eta_init),
                         Group::control);
    if (is_rebar_family(cfg.kind))
      psi_id_ = aux_.add("psi", Tensor::scalar(std::log(cfg.lambda_init)), Group::control);

    const bool baseline =
        cfg.kind == EstimatorKind::nvil ||
        (cfg.use_baseline && cfg.kind != EstimatorKind::reinforce &&
         cfg.kind != EstimatorKind::concrete);
    if (baseline) {
      bl_dim_ = (int)model.baseline_input().shape.numel();
      if (bl_dim_ > 0) {
        require(cfg.baseline_hidden > 0, "baseline hidden width must be positive");
        const int h = cfg.baseline_hidden;
        bl_w1_ = aux_.add("bl.W1",
                          uniform_init(init_rng, Shape{(int64_t)h, (int64_t)bl_dim_},
                                       1.0 / std::sqrt((double)bl_dim_)),
                          Group::baseline);
        bl_c1_ = aux_.add("bl.c1", Tensor::zeros(Shape{(int64_t)h}), Group::baseline);
        bl_w2_ = aux_.add("bl.w2",
                          uniform_init(init_rng, Shape{(int64_t)h}, 1.0 / std::sqrt((double)h)),
                          Group::baseline);
      }
      bl_d_ = aux_.add("bl.d", Tensor::scalar(0.0), Group::baseline);
      for (int id : {bl_w1_, bl_c1_, bl_w2_, bl_d_})
        if (id >= 0) baseline_ids_.push_back(id);
    }
    asize_ = (int)aux_.size();
  }

  StochasticModel& model() { return model_; }
  const EstimatorConfig& config() const { return cfg_; }
  const std::vector<int>& tracked() const { return tracked_; }
  ParamStore& aux() { return aux_; }
  bool has_baseline() const { return bl_d_ >= 0; }

  double lambda() const {
    return psi_id_ >= 0 ? std::exp(aux_.value(psi_id_).data[0]) : cfg_.lambda_init;
  }
  std::vector<double> etas() const {
    if (eta_id_ < 0) return std::vector<double>(tracked_.size(), 0.0);
    const Tensor& e = aux_.value(eta_id_);
    return std::vector<double>(e.data.begin(), e.data.end());
  }
  double eta_mean() const {
    std::vector<double> e = etas();
    double s = 0.0;
    for (double x : e) s += x;
    return e.empty() ? 0.0 : s / (double)e.size();
  }

  Draws draw(RngStream& rng) { return make_draws(model_, rng); }

  // Pure given (model parameters, aux state, draws).
  GradEstimate estimate(const Draws& d) { return estimate_impl(d, lambda(), etas()); }

  // Re-evaluate the same draws at a different temperature (current scaling
  // coefficients).  Used to build finite-difference probes of the variance
  // surface over a whole minibatch.
  GradEstimate estimate_at(const Draws& d, double lam) { return estimate_impl(d, lam, etas()); }

  // Single-draw adaptation: η by the exact single-sample variance gradient,
  // ψ = log λ by central finite differences re-running this estimator on the
  // same draws, and the baseline by its regression gradient.
  void adapt(const GradEstimate& est, const Draws& d) {
    adapt_impl(est, [&](double lam) { return estimate_impl(d, lam, etas()).grads; });
  }

  // Batched adaptation: `reeval` must return the batch-mean estimate at the
  // given temperature, holding draws, inputs, and every other state fixed.
  void adapt_batched(const GradEstimate& est, const std::function<GradVec(double)>& reeval) {
    adapt_impl(est, reeval);
  }

 private:
  static Tensor uniform_init(RngStream& rng, Shape s, double scale) {
    Tensor t{s};
    for (auto& x : t.data) x = (2.0 * rng.uniform() - 1.0) * scale;
    return t;
  }

  static double mean_of(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v;
    return x.empty() ? 0.0 : s / (double)x.size();
  }

  // dst[p] += s * src[p], allocating the slot as needed.
  static void slot_axpy(GradVec& dst, size_t p, const GradVec& src, double s) {
    if (!src.set(p)) return;
    dst.ensure(p, src.slots[p].shape);
    double* out = dst.slots[p].data.data();
    const double* in = src.slots[p].data.data();
    for (size_t q = 0; q < src.slots[p].data.size(); ++q) out[q] += s * in[q];
  }

  int scratch_slot(int layer) const { return msize_ + asize_ + layer; }

  Value aux_leaf(Tape& t, int aux_id) { return t.leaf(msize_ + aux_id, aux_.value(aux_id)); }

  Value baseline_forward(Tape& t) {
    Value d = aux_leaf(t, bl_d_);
    if (bl_dim_ == 0) return d;
    Value in = t.constant(model_.baseline_input());
    Value h = tanh(matmul(aux_leaf(t, bl_w1_), in) + aux_leaf(t, bl_c1_));
    return sum(aux_leaf(t, bl_w2_) * h) + d;
  }

  void finish_baseline(Tape& t, GradEstimate& est, Value c, double target) {
    if (!has_baseline()) return;
    Value loss = square(c - target);
    GradVec g((size_t)(msize_ + asize_));
    t.backward(loss, g);
    for (int id : baseline_ids_)
      if (g.set((size_t)(msize_ + id)))
        est.aux_grads.slots[(size_t)id] = std::move(g.slots[(size_t)(msize_ + id)]);
  }

  // logit of the conditional uniform ũ reconstructed from (v, b), with the
  // firing threshold u' = σ(−α) kept live on the tape. Under common random
  // numbers the value reproduces logit(u) exactly, while the derivative
  // carries the conditional dependence on α:
  //   b = 1: logit(ũ) = softplus(α + log v) − α − log(1 − v)
  //   b = 0: logit(ũ) = log(1 − v) − softplus(log v − α) − α
  Value coupled_logit_u(Tape& t, Value alpha_hard, const Tensor& b, const Tensor& v) {
    Tensor lv{v.shape}, l1mv{v.shape};
    for (size_t q = 0; q < v.data.size(); ++q) {
      const double vv = clamp(v.data[q], 1e-12, 1.0 - 1e-12);
      lv.data[q] = std::log(vv);
      l1mv.data[q] = std::log1p(-vv);
    }
    Value clv = t.constant(lv), cl1mv = t.constant(l1mv);
    Value e1 = softplus(alpha_hard + clv) - alpha_hard - cl1mv;
    Value e0 = cl1mv - softplus(clv - alpha_hard) - alpha_hard;
    return select(t.constant(b), e1, e0);
  }

  void adapt_impl(const GradEstimate& est, const std::function<GradVec(double)>& reeval) {
    GradVec g((size_t)asize_);
    bool any = false;
    if (eta_id_ >= 0 && cfg_.adapt_eta) {
      // d/dη_k Σ_i r_i² = −2 Σ_{i in group k} r_i c_i  (r is affine in η).
      Tensor de = Tensor::zeros(aux_.value(eta_id_).shape);
      for (size_t k = 0; k < tracked_.size(); ++k) {
        const size_t p = (size_t)tracked_[k];
        if (!est.grads.set(p) || !est.cv_grads.set(p)) continue;
        double acc = 0.0;
        for (size_t q = 0; q < est.grads.slots[p].data.size(); ++q)
          acc += est.grads.slots[p].data[q] * est.cv_grads.slots[p].data[q];
        de.data[k] = -2.0 * acc;
      }
      g.slots[(size_t)eta_id_] = de;
      any = true;
    }
    if (psi_id_ >= 0 && cfg_.adapt_lambda) {
      // d/dψ Σ_i r_i² ≈ 2 Σ_i r_i (r_i⁺ − r_i⁻) / (2δ), common random numbers.
      const double psi = aux_.value(psi_id_).data[0];
      const double dstep = cfg_.lambda_fd_step;
      GradVec diff = reeval(std::exp(psi + dstep));
      diff.add_scaled(reeval(std::exp(psi - dstep)), -1.0);
      require(diff.all_finite(), "estimator is not finite at the perturbed temperature");
      g.ensure((size_t)psi_id_, Shape::scalar());
      g.slots[(size_t)psi_id_].data[0] = est.grads.dot(diff) / dstep;
      any = true;
    }
    for (int id : baseline_ids_)
      if (est.aux_grads.set((size_t)id)) {
        g.slots[(size_t)id] = est.aux_grads.slots[(size_t)id];
        any = true;
      }
    if (any) aux_opt_.step(g);
  }

  GradEstimate estimate_impl(const Draws& d, double lam, const std::vector<double>& eta) {
    const EstimatorKind kind = cfg_.kind;
    const int L = model_.num_layers();
    require((int)d.u.size() == L, "draws must carry one uniform tensor per layer");
    if (!cfg_.couple && (kind == EstimatorKind::muprop || is_rebar_family(kind)))
      require((int)d.v.size() == L, "draws must carry conditional noise when coupling is off");
    require(eta.size() == tracked_.size(), "one control-variate scaling per tracked parameter");
    if (kind == EstimatorKind::rebar_alt) return estimate_alt(d, lam, eta);

    Tape t;
    // Hard forward pass: logits at the sampled prefix, z = α + logit(u),
    // b = H(z). The constants b feed every later objective evaluation.
    std::vector<Value> alpha((size_t)L), bval((size_t)L), zlive((size_t)L), lp((size_t)L);
    std::vector<Tensor> b((size_t)L), theta((size_t)L);
    for (int i = 0; i < L; ++i) {
      const size_t si = (size_t)i;
      alpha[si] = model_.layer_logits(t, i, i ? &bval[si - 1] : nullptr);
      require(alpha[si].shape == d.u[si].shape, "logit/draw shape mismatch");
      zlive[si] = sample_z(alpha[si], d.u[si]);
      b[si] = hard_threshold(zlive[si].value());
      Tensor av = alpha[si].value();
      theta[si] = Tensor{av.shape};
      for (size_t q = 0; q < av.data.size(); ++q) theta[si].data[q] = sigmoid(av.data[q]);
      bval[si] = t.constant(b[si]);
      lp[si] = log_prob_bernoulli(alpha[si], b[si]);
    }
    Value f_hard = model_.objective(t, bval);
    const double f = f_hard.scalar();
    require(std::isfinite(f), "objective is not finite at the hard sample");

    GradEstimate est;
    est.grads.resize((size_t)msize_);
    est.cv_grads.resize((size_t)msize_);
    est.aux_grads.resize((size_t)asize_);
    est.objective = f;

    if (kind == EstimatorKind::concrete) {
      // Pure pathwise gradient through the relaxed chain; the hard sample is
      // kept only for reporting the proper discrete objective.
      std::vector<Value> srel((size_t)L);
      for (int i = 0; i < L; ++i) {
        Value a = (i == 0) ? alpha[0] : model_.layer_logits(t, i, &srel[(size_t)i - 1]);
        Value zr = (i == 0) ? zlive[0] : sample_z(a, d.u[(size_t)i]);
        srel[(size_t)i] = relax(zr, lam);
      }
      Value f_soft = model_.objective(t, srel);
      require(std::isfinite(f_soft.scalar()), "objective is not finite at the relaxed sample");
      t.backward(f_soft, est.grads);
      est.cv_value = f_soft.scalar();
      return est;
    }

    // Direct pathwise term: explicit θ-dependence of f at the hard sample.
    t.backward(f_hard, est.grads);

    Value cbl_val;
    double c_bl = 0.0;
    if (has_baseline()) {
      cbl_val = baseline_forward(t);
      c_bl = cbl_val.scalar();
      require(std::isfinite(c_bl), "baseline value is not finite");
    }

    Value logp = lp[0];
    for (int i = 1; i < L; ++i) logp = logp + lp[(size_t)i];

    if (kind == EstimatorKind::reinforce || kind == EstimatorKind::nvil) {
      GradVec gscore((size_t)msize_);
      t.backward(logp, gscore);
      est.grads.add_scaled(gscore, f - c_bl);
      est.learning_signal = f - c_bl;
      est.cv_value = c_bl;
      finish_baseline(t, est, cbl_val, f);
      return est;
    }

    if (kind == EstimatorKind::simple_muprop) {
      // Mean-field chain, values only: f(θ̄) is a constant statistic here.
      std::vector<Value> mf((size_t)L);
      for (int i = 0; i < L; ++i) {
        Value a = (i == 0) ? alpha[0] : model_.layer_logits(t, i, &mf[(size_t)i - 1]);
        Tensor av = a.value();
        Tensor m{av.shape};
        for (size_t q = 0; q < av.data.size(); ++q) m.data[q] = sigmoid(av.data[q]);
        mf[(size_t)i] = t.constant(m);
      }
      const double fmf = model_.objective(t, mf).scalar();
      require(std::isfinite(fmf), "objective is not finite at the mean-field point");
      GradVec gscore((size_t)msize_);
      t.backward(logp, gscore);
      est.grads.add_scaled(gscore, f - c_bl);
      for (size_t k = 0; k < tracked_.size(); ++k) {
        const size_t p = (size_t)tracked_[k];
        slot_axpy(est.cv_grads, p, gscore, fmf);
        slot_axpy(est.grads, p, est.cv_grads, -eta[k]);
      }
      const double em = mean_of(eta);
      est.learning_signal = f - c_bl - em * fmf;
      est.cv_value = fmf;
      finish_baseline(t, est, cbl_val, f - em * fmf);
      return est;
    }

    if (kind == EstimatorKind::muprop) {
      // Mean-field chain kept live for the analytic Taylor correction.
      std::vector<Value> mlive((size_t)L), sb((size_t)L);
      for (int i = 0; i < L; ++i) {
        Value a = (i == 0) ? alpha[0] : model_.layer_logits(t, i, &mlive[(size_t)i - 1]);
        mlive[(size_t)i] = sigmoid(a);
      }
      // f and its input-gradient at the mean-field point, via scratch leaves.
      for (int i = 0; i < L; ++i)
        sb[(size_t)i] = t.leaf(scratch_slot(i), mlive[(size_t)i].value());
      Value fmf_val = model_.objective(t, sb);
      const double fmf = fmf_val.scalar();
      require(std::isfinite(fmf), "objective is not finite at the mean-field point");
      GradVec gmf((size_t)(msize_ + asize_ + L));
      t.backward(fmf_val, gmf);
      std::vector<Tensor> gb((size_t)L);
      for (int i = 0; i < L; ++i)
        gb[(size_t)i] = gmf.set((size_t)scratch_slot(i))
                            ? gmf.slots[(size_t)scratch_slot(i)]
                            : Tensor::zeros(mlive[(size_t)i].shape);

      // Sampled linear term f'(b̄)ᵀ(b − b̄) and its analytic expectation
      // d/dα ⟨f'(b̄), b̄(α)⟩ (the mean of b is the mean-field point itself).
      double taylor = 0.0;
      for (int i = 0; i < L; ++i) {
        const Tensor mv = mlive[(size_t)i].value();
        for (size_t q = 0; q < mv.data.size(); ++q)
          taylor += gb[(size_t)i].data[q] * (b[(size_t)i].data[q] - mv.data[q]);
      }
      Value lin = sum(t.constant(gb[0]) * mlive[0]);
      for (int i = 1; i < L; ++i) lin = lin + sum(t.constant(gb[(size_t)i]) * mlive[(size_t)i]);
      GradVec glin((size_t)msize_);
      t.backward(lin, glin);

      GradVec gscore((size_t)msize_);
      t.backward(logp, gscore);
      est.grads.add_scaled(gscore, f - fmf - c_bl);
      for (size_t k = 0; k < tracked_.size(); ++k) {
        const size_t p = (size_t)tracked_[k];
        slot_axpy(est.cv_grads, p, gscore, taylor);
        slot_axpy(est.cv_grads, p, glin, -1.0);
        slot_axpy(est.grads, p, est.cv_grads, -eta[k]);
      }
      const double em = mean_of(eta);
      est.learning_signal = f - fmf - c_bl - em * taylor;
      est.cv_value = fmf + em * taylor;
      finish_baseline(t, est, cbl_val, f - fmf);
      return est;
    }

    // REBAR family. Conditional noise: common random numbers recover v from
    // the u that produced b (so the conditional path reproduces z in value
    // while keeping its own derivative structure), or independent v.
    std::vector<Tensor> v((size_t)L);
    for (int i = 0; i < L; ++i)
      v[(size_t)i] = cfg_.couple ? couple_uv(d.u[(size_t)i], theta[(size_t)i]).v : d.v[(size_t)i];

    const bool modified = kind == EstimatorKind::rebar_modified;
    const double em = mean_of(eta);

    if (kind == EstimatorKind::rebar_multilayer) {
      // n-pass decomposition: each layer's score term gets its own
      // conditionally-marginalized control variate, with the continuation
      // relaxed and sharing the hard chain's uniforms.
      double fcv_sum = 0.0;
      for (int i = 0; i < L; ++i) {
        const size_t si = (size_t)i;
        GradVec gscore_i((size_t)msize_);
        t.backward(lp[si], gscore_i);

        auto continue_relaxed = [&](std::vector<Value>& s) {
          for (int j = i + 1; j < L; ++j) {
            Value a = model_.layer_logits(t, j, &s[(size_t)j - 1]);
            Value zj = modified ? sample_z_modified(a, d.u[(size_t)j], lam)
                                : sample_z(a, d.u[(size_t)j]);
            s[(size_t)j] = relax(zj, lam);
          }
        };

        // Control-variate pass: conditional z̃_i | b_i, relaxed continuation.
        std::vector<Value> scv(bval.begin(), bval.end());
        Value zc = modified ? conditional_z_modified(alpha[si], b[si], v[si], lam)
                            : conditional_z(alpha[si], b[si], v[si]);
        scv[si] = relax(zc, lam);
        continue_relaxed(scv);
        Value f_cv = model_.objective(t, scv);
        const double fcv = f_cv.scalar();
        require(std::isfinite(fcv), "objective is not finite at the conditional sample");
        GradVec gcond_i((size_t)msize_);
        t.backward(f_cv, gcond_i);

        // Reparameterized pass: relaxation of this layer's own z.
        std::vector<Value> srel(bval.begin(), bval.end());
        Value zs = modified ? sample_z_modified(alpha[si], d.u[si], lam) : zlive[si];
        srel[si] = relax(zs, lam);
        continue_relaxed(srel);
        Value f_rel = model_.objective(t, srel);
        require(std::isfinite(f_rel.scalar()), "objective is not finite at the relaxed sample");
        GradVec gsoft_i((size_t)msize_);
        t.backward(f_rel, gsoft_i);

        est.grads.add_scaled(gscore_i, f - c_bl);
        for (size_t k = 0; k < tracked_.size(); ++k) {
          const size_t p = (size_t)tracked_[k];
          slot_axpy(est.cv_grads, p, gscore_i, fcv);
          slot_axpy(est.cv_grads, p, gsoft_i, -1.0);
          slot_axpy(est.cv_grads, p, gcond_i, 1.0);
        }
        fcv_sum += fcv;
      }
      for (size_t k = 0; k < tracked_.size(); ++k)
        slot_axpy(est.grads, (size_t)tracked_[k], est.cv_grads, -eta[k]);
      est.learning_signal = f - c_bl;
      est.cv_value = fcv_sum / (double)L;
      finish_baseline(t, est, cbl_val, f - em * est.cv_value);
      return est;
    }

    // Single-pass REBAR: one relaxed chain and one conditional chain, a single
    // score bracket over the whole-network log-probability. With one layer
    // this is the plain estimator; with several it is the coupled variant
    // (the chains share the per-layer uniforms of the hard chain).
    GradVec gscore((size_t)msize_);
    t.backward(logp, gscore);

    const bool single = L == 1 && kind != EstimatorKind::rebar_coupled_multilayer;
    const double mult = modified ? modified_multiplier(lam) : 1.0;

    std::vector<Value> sq((size_t)L);
    for (int i = 0; i < L; ++i) {
      Value a = (i == 0) ? alpha[0] : model_.layer_logits(t, i, &sq[(size_t)i - 1]);
      Value zq = modified ? sample_z_modified(a, d.u[(size_t)i], lam)
                          : (i == 0 ? zlive[0] : sample_z(a, d.u[(size_t)i]));
      sq[(size_t)i] = relax(zq, lam);
    }
    Value f_soft = model_.objective(t, sq);
    require(std::isfinite(f_soft.scalar()), "objective is not finite at the relaxed sample");
    GradVec gsoft((size_t)msize_);
    t.backward(f_soft, gsoft);

    std::vector<Value> sc((size_t)L);
    for (int i = 0; i < L; ++i) {
      const size_t si = (size_t)i;
      Value zc;
      if (single) {
        zc = modified ? conditional_z_modified(alpha[0], b[0], v[0], lam)
                      : conditional_z(alpha[0], b[0], v[0]);
      } else {
        Value at = (i == 0) ? alpha[0] : model_.layer_logits(t, i, &sc[si - 1]);
        zc = (modified ? at * mult : at) + coupled_logit_u(t, alpha[si], b[si], v[si]);
      }
      sc[si] = relax(zc, lam);
    }
    Value f_cond = model_.objective(t, sc);
    const double fcond = f_cond.scalar();
    require(std::isfinite(fcond), "objective is not finite at the conditional sample");
    GradVec gcond((size_t)msize_);
    t.backward(f_cond, gcond);

    est.grads.add_scaled(gscore, f - c_bl);
    for (size_t k = 0; k < tracked_.size(); ++k) {
      const size_t p = (size_t)tracked_[k];
      slot_axpy(est.cv_grads, p, gscore, fcond);
      slot_axpy(est.cv_grads, p, gsoft, -1.0);
      slot_axpy(est.cv_grads, p, gcond, 1.0);
      slot_axpy(est.grads, p, est.cv_grads, -eta[k]);
    }
    est.learning_signal = f - c_bl - em * fcond;
    est.cv_value = fcond;
    finish_baseline(t, est, cbl_val, f - em * fcond);
    return est;
  }

  // Residual-decomposition assembly: the reparameterizable relaxed term is
  // taken pathwise up front and the remainder — hard score term minus the
  // conditionally marginalized relaxation — is grouped per pass, each pass on
  // its own tape, with the conditional built through the reconstructed
  // uniform. Algebraically identical to the single-pass assembly above.
  GradEstimate estimate_alt(const Draws& d, double lam, const std::vector<double>& eta) {
    require(model_.num_layers() == 1,
            "the alternative-derivation estimator supports exactly one stochastic layer");

    Tape t1;
    Value a1 = model_.layer_logits(t1, 0, nullptr);
    require(a1.shape == d.u[0].shape, "logit/draw shape mismatch");
    Tensor z0 = sample_z(a1, d.u[0]).value();
    Tensor b = hard_threshold(z0);
    Tensor av = a1.value();
    Tensor theta{av.shape};
    for (size_t q = 0; q < av.data.size(); ++q) theta.data[q] = sigmoid(av.data[q]);
    const Tensor v = cfg_.couple ? couple_uv(d.u[0], theta).v : d.v[0];

    std::vector<Value> bv{t1.constant(b)};
    Value f_hard = model_.objective(t1, bv);
    const double f = f_hard.scalar();
    require(std::isfinite(f), "objective is not finite at the hard sample");

    GradEstimate est;
    est.grads.resize((size_t)msize_);
    est.cv_grads.resize((size_t)msize_);
    est.aux_grads.resize((size_t)asize_);
    est.objective = f;
    t1.backward(f_hard, est.grads);

    Value cbl_val;
    double c_bl = 0.0;
    if (has_baseline()) {
      cbl_val = baseline_forward(t1);
      c_bl = cbl_val.scalar();
      require(std::isfinite(c_bl), "baseline value is not finite");
    }
    GradVec gscore((size_t)msize_);
    t1.backward(log_prob_bernoulli(a1, b), gscore);

    Tape t2;
    Value a2 = model_.layer_logits(t2, 0, nullptr);
    std::vector<Value> s2{relax(sample_z(a2, d.u[0]), lam)};
    Value f_soft = model_.objective(t2, s2);
    require(std::isfinite(f_soft.scalar()), "objective is not finite at the relaxed sample");
    GradVec gsoft((size_t)msize_);
    t2.backward(f_soft, gsoft);

    Tape t3;
    Value a3 = model_.layer_logits(t3, 0, nullptr);
    std::vector<Value> s3{relax(a3 + coupled_logit_u(t3, a3, b, v), lam)};
    Value f_cond = model_.objective(t3, s3);
    const double fcond = f_cond.scalar();
    require(std::isfinite(fcond), "objective is not finite at the conditional sample");
    GradVec gcond((size_t)msize_);
    t3.backward(f_cond, gcond);

    // r = ∂f_direct + η ∂f_soft + (f − c)·score − η (f_cond·score + ∂f_cond)
    est.grads.add_scaled(gscore, f - c_bl);
    for (size_t k = 0; k < tracked_.size(); ++k) {
      const size_t p = (size_t)tracked_[k];
      slot_axpy(est.grads, p, gsoft, eta[k]);
      slot_axpy(est.grads, p, gscore, -eta[k] * fcond);
      slot_axpy(est.grads, p, gcond, -eta[k]);
      slot_axpy(est.cv_grads, p, gscore, fcond);
      slot_axpy(est.cv_grads, p, gsoft, -1.0);
      slot_axpy(est.cv_grads, p, gcond, 1.0);
    }
    const double em = mean_of(eta);
    est.learning_signal = f - c_bl - em * fcond;
    est.cv_value = fcond;
    finish_baseline(t1, est, cbl_val, f - em * fcond);
    return est;
  }

  StochasticModel& model_;
  EstimatorConfig cfg_;
  ParamStore aux_;
  Adam aux_opt_;
  std::vector<int> tracked_;
  std::vector<int> baseline_ids_;
  int msize_ = 0, asize_ = 0, bl_dim_ = 0;
  int eta_id_ = -1, psi_id_ = -1;
  int bl_w1_ = -1, bl_c1_ = -1, bl_w2_ = -1, bl_d_ = -1;
};

}  // namespace discgrad
