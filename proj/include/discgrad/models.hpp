#pragma once
// Concrete objectives: the toy quadratic loss, random test networks with
// enumerable latents, the sigmoid-belief-network variational bound, the
// structured-prediction conditional bound, and the multisample evaluation
// bound. All follow the minimization convention of StochasticModel.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "discgrad/core.hpp"
#include "discgrad/model.hpp"
#include "discgrad/params.hpp"
#include "discgrad/reparam.hpp"
#include "discgrad/rng.hpp"
#include "discgrad/tape.hpp"

namespace discgrad {

// Uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline Tensor init_uniform_fanin(RngStream& rng, int64_t rows, int64_t cols) {
  Tensor w{Shape{rows, cols}};
  const double s = 1.0 / std::sqrt((double)cols);
  for (auto& x : w.data) x = (2.0 * rng.uniform() - 1.0) * s;
  return w;
}

inline Tensor init_uniform_vec(RngStream& rng, int64_t n, double scale) {
  Tensor v{Shape{n}};
  for (auto& x : v.data) x = (2.0 * rng.uniform() - 1.0) * scale;
  return v;
}

// {0,1} values remapped to {-1,+1} at a network input boundary.
inline Value to_pm1(Value b) { return b * 2.0 - 1.0; }

inline Tensor to_pm1(const Tensor& b) {
  Tensor out{b.shape};
  for (size_t i = 0; i < b.data.size(); ++i) out.data[i] = 2.0 * b.data[i] - 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Toy quadratic loss:  f(b) = sum_j (b_j - t)^2,  t in (0,1).
// ---------------------------------------------------------------------------

class ToyModel : public StochasticModel {
 public:
  explicit ToyModel(double target, int n = 1, double alpha0 = 0.0)
      : target_(target), n_(n) {
    require(target > 0.0 && target < 1.0, "toy target must lie in (0,1)");
    require(n >= 1, "toy model needs at least one unit");
    alpha_id_ = store_.add("alpha", Tensor::full(Shape{(int64_t)n}, alpha0), Group::model);
  }

  ParamStore& store() override { return store_; }
  int num_layers() const override { return 1; }
  int units(int) const override { return n_; }
  Value layer_logits(Tape& t, int, const Value*) override { return store_.leaf(t, alpha_id_); }
  Value objective(Tape&, std::span<const Value> s) override {
    return sum(square(s[0] - target_));
  }

  int alpha_id() const { return alpha_id_; }
  double target() const { return target_; }
  double theta(int i = 0) const { return sigmoid(store_.value(alpha_id_).at(i)); }
  void set_alpha(double a) {
    for (auto& x : store_.value(alpha_id_).data) x = a;
  }
  // Exact E[f] at the current parameters: sum_j [ theta_j (1-t)^2 + (1-theta_j) t^2 ].
  double exact_expected_loss() const {
    double e = 0.0;
    for (double a : store_.value(alpha_id_).data) {
      const double th = sigmoid(a);
      e += th * (1.0 - target_) * (1.0 - target_) + (1.0 - th) * target_ * target_;
    }
    return e;
  }

 private:
  ParamStore store_;
  double target_;
  int n_;
  int alpha_id_;
};

// ---------------------------------------------------------------------------
// Random test networks with enumerable latents.
// ---------------------------------------------------------------------------

// One stochastic layer of n units; f(b) = w2 . tanh(W1 (2b-1) + c1) + d, with
// fixed random coefficients. An optional kappa adds explicit parameter
// dependence to f:  kappa * sum(sigmoid(alpha) * b).
class RandomNetModel : public StochasticModel {
 public:
  RandomNetModel(int n, int hidden, RngStream& rng, double alpha_scale = 1.5,
                 double kappa = 0.0)
      : n_(n), kappa_(kappa) {
    alpha_id_ = store_.add("alpha", init_uniform_vec(rng, n, alpha_scale), Group::model);
    w1_ = init_uniform_fanin(rng, hidden, n);
    c1_ = init_uniform_vec(rng, hidden, 0.5);
    w2_ = init_uniform_vec(rng, hidden, 1.0);
    d_ = 2.0 * rng.uniform() - 1.0;
  }

  ParamStore& store() override { return store_; }
  int num_layers() const override { return 1; }
  int units(int) const override { return n_; }
  Value layer_logits(Tape& t, int, const Value*) override { return store_.leaf(t, alpha_id_); }
  Value objective(Tape& t, std::span<const Value> s) override {
    Value h = tanh(matmul(t.constant(w1_), to_pm1(s[0])) + t.constant(c1_));
    Value f = sum(t.constant(w2_) * h) + d_;
    if (kappa_ != 0.0) f = f + kappa_ * sum(sigmoid(store_.leaf(t, alpha_id_)) * s[0]);
    return f;
  }

  int alpha_id() const { return alpha_id_; }

 private:
  ParamStore store_;
  int n_;
  double kappa_;
  int alpha_id_;
  Tensor w1_, c1_, w2_;
  double d_;
};

// Chain of small stochastic layers with trainable logits/weights:
//   alpha_0 = a_0,   alpha_i = A_i (2 b_{i-1} - 1) + a_i,
// and a fixed objective that couples adjacent layers so cross-layer gradient
// paths are exercised:
//   f(b) = sum_i w_i . tanh(V_i (2 b_i - 1) + c_i)
//        + sum_i (r_i . b_i) * (q_i . b_{i+1}).
class RandomLayeredModel : public StochasticModel {
 public:
  RandomLayeredModel(std::vector<int> units, int hidden, RngStream& rng,
                     double alpha_scale = 1.0)
      : units_(std::move(units)) {
    require(!units_.empty(), "layered model needs at least one layer");
    for (size_t i = 0; i < units_.size(); ++i) {
      const int n = units_[i];
      if (i > 0)
        weight_ids_.push_back(store_.add("A" + std::to_string(i),
                                         init_uniform_fanin(rng, n, units_[i - 1]),
                                         Group::model));
      bias_ids_.push_back(store_.add("a" + std::to_string(i),
                                     init_uniform_vec(rng, n, alpha_scale), Group::model));
      v_.push_back(init_uniform_fanin(rng, hidden, n));
      c_.push_back(init_uniform_vec(rng, hidden, 0.5));
      w_.push_back(init_uniform_vec(rng, hidden, 1.0));
      if (i + 1 < units_.size()) {
        r_.push_back(init_uniform_vec(rng, n, 1.0));
        q_.push_back(init_uniform_vec(rng, units_[i + 1], 1.0));
      }
    }
  }

  ParamStore& store() override { return store_; }
  int num_layers() const override { return (int)units_.size(); }
  int units(int layer) const override { return units_[(size_t)layer]; }
  Value layer_logits(Tape& t, int layer, const Value* prev) override {
    Value bias = store_.leaf(t, bias_ids_[(size_t)layer]);
    if (layer == 0) return bias;
    require(prev != nullptr, "layered model needs the previous sample");
    Value wmat = store_.leaf(t, weight_ids_[(size_t)layer - 1]);
    return matmul(wmat, to_pm1(*prev)) + bias;
  }
  Value objective(Tape& t, std::span<const Value> s) override {
    Value f;
    for (size_t i = 0; i < units_.size(); ++i) {
      Value h = tanh(matmul(t.constant(v_[i]), to_pm1(s[i])) + t.constant(c_[i]));
      Value term = sum(t.constant(w_[i]) * h);
      f = (i == 0) ? term : f + term;
    }
    for (size_t i = 0; i + 1 < units_.size(); ++i)
      f = f + sum(t.constant(r_[i]) * s[i]) * sum(t.constant(q_[i]) * s[i + 1]);
    return f;
  }

 private:
  ParamStore store_;
  std::vector<int> units_;
  std::vector<int> weight_ids_, bias_ids_;
  std::vector<Tensor> v_, c_, w_, r_, q_;
};

// ---------------------------------------------------------------------------
// Dense blocks shared by the belief-network models.
// ---------------------------------------------------------------------------

enum class DetKind { linear, tanh2 };

inline DetKind parse_det_kind(const std::string& s) {
  if (s == "linear") return DetKind::linear;
  if (s == "tanh2") return DetKind::tanh2;
  fail("unknown deterministic block kind: " + s);
}

// in -> logits(out), either affine or through two tanh layers of `width`.
struct DenseBlock {
  DetKind kind = DetKind::linear;
  std::vector<int> ids;  // linear: {W, c}; tanh2: {U1, a1, U2, a2, W, c}

  static DenseBlock make(ParamStore& s, const std::string& prefix, int in, int out,
                         DetKind kind, int width, RngStream& rng,
                         const Tensor* bias_init = nullptr) {
    DenseBlock b;
    b.kind = kind;
    Tensor bias = bias_init ? *bias_init : Tensor::zeros(Shape{(int64_t)out});
    require((int64_t)out == bias.shape.numel(), "dense block bias init size mismatch");
    if (kind == DetKind::linear) {
      b.ids.push_back(s.add(prefix + ".W", init_uniform_fanin(rng, out, in)));
      b.ids.push_back(s.add(prefix + ".c", bias));
    } else {
      b.ids.push_back(s.add(prefix + ".U1", init_uniform_fanin(rng, width, in)));
      b.ids.push_back(s.add(prefix + ".a1", Tensor::zeros(Shape{(int64_t)width})));
      b.ids.push_back(s.add(prefix + ".U2", init_uniform_fanin(rng, width, width)));
      b.ids.push_back(s.add(prefix + ".a2", Tensor::zeros(Shape{(int64_t)width})));
      b.ids.push_back(s.add(prefix + ".W", init_uniform_fanin(rng, out, width)));
      b.ids.push_back(s.add(prefix + ".c", bias));
    }
    return b;
  }

  Value forward(ParamStore& s, Tape& t, Value x) const {
    if (kind == DetKind::linear)
      return matmul(s.leaf(t, ids[0]), x) + s.leaf(t, ids[1]);
    Value h1 = tanh(matmul(s.leaf(t, ids[0]), x) + s.leaf(t, ids[1]));
    Value h2 = tanh(matmul(s.leaf(t, ids[2]), h1) + s.leaf(t, ids[3]));
    return matmul(s.leaf(t, ids[4]), h2) + s.leaf(t, ids[5]);
  }
};

// ---------------------------------------------------------------------------
// Sigmoid belief network, single-sample variational bound.
// ---------------------------------------------------------------------------

struct SbnSpec {
  int stochastic_layers = 1;
  int units = 20;
  DetKind det = DetKind::linear;
  int det_width = 200;
  int obs_dim = 16;
};

// Inference chain x -> b_0 -> ... -> b_{L-1}; generative chain runs the other
// way with its own parameters plus trainable prior logits on the deepest
// layer. objective() returns the negated single-sample bound
//   -( log p(x, b) - log q(b | x) ),
// rebuilding the inference logits from the samples it is handed, which is how
// the bound's explicit parameter dependence enters relaxed evaluations.
class SbnModel : public StochasticModel {
 public:
  SbnModel(const SbnSpec& spec, const Tensor& pixel_mean, RngStream& rng)
      : spec_(spec) {
    require(spec.stochastic_layers >= 1, "sbn needs at least one stochastic layer");
    require(spec.units >= 1 && spec.obs_dim >= 1, "sbn dims must be positive");
    require((int64_t)spec.obs_dim == pixel_mean.shape.numel(),
            "pixel mean length must equal obs_dim");

    center_ = Tensor{Shape{(int64_t)spec.obs_dim}};
    Tensor out_bias{Shape{(int64_t)spec.obs_dim}};
    for (int64_t i = 0; i < spec.obs_dim; ++i) {
      const double m = clamp(pixel_mean.at(i), 1e-2, 1.0 - 1e-2);
      center_.at(i) = 2.0 * m - 1.0;
      out_bias.at(i) = logit(m);
    }

    for (int i = 0; i < spec.stochastic_layers; ++i) {
      const int in = (i == 0) ? spec.obs_dim : spec.units;
      inf_.push_back(DenseBlock::make(store_, "inf" + std::to_string(i), in, spec.units,
                                      spec.det, spec.det_width, rng));
      for (int id : inf_.back().ids) inference_ids_.push_back(id);
    }
    prior_id_ = store_.add("prior", Tensor::zeros(Shape{(int64_t)spec.units}));
    for (int i = spec.stochastic_layers - 2; i >= 0; --i)
      gen_.push_back(DenseBlock::make(store_, "gen" + std::to_string(i), spec.units,
                                      spec.units, spec.det, spec.det_width, rng));
    out_ = DenseBlock::make(store_, "out", spec.units, spec.obs_dim, spec.det,
                            spec.det_width, rng, &out_bias);
    x_ = Tensor::zeros(Shape{(int64_t)spec.obs_dim});
  }

  void set_input(const Tensor& x) {
    require(x.shape.numel() == (int64_t)spec_.obs_dim, "sbn input dim mismatch");
    x_ = x;
  }

  ParamStore& store() override { return store_; }
  int num_layers() const override { return spec_.stochastic_layers; }
  int units(int) const override { return spec_.units; }

  Value layer_logits(Tape& t, int layer, const Value* prev) override {
    if (layer == 0) return inf_[0].forward(store_, t, t.constant(baseline_input()));
    require(prev != nullptr, "sbn needs the previous sample");
    return inf_[(size_t)layer].forward(store_, t, to_pm1(*prev));
  }

  Value objective(Tape& t, std::span<const Value> s) override {
    const int L = spec_.stochastic_layers;
    require((int)s.size() == L, "sbn objective needs one sample per layer");
    // log q(b | x), re-derived from the samples.
    Value logq;
    for (int i = 0; i < L; ++i) {
      Value alpha = layer_logits(t, i, i == 0 ? nullptr : &s[(size_t)i - 1]);
      Value lp = log_likelihood_bernoulli(alpha, s[(size_t)i]);
      logq = (i == 0) ? lp : logq + lp;
    }
    // log p(x, b): prior on the deepest layer, then downward conditionals.
    Value logp = log_likelihood_bernoulli(
        broadcast_prior(t), s[(size_t)L - 1]);
    for (int i = L - 2; i >= 0; --i) {
      Value alpha = gen_[(size_t)(L - 2 - i)].forward(store_, t, to_pm1(s[(size_t)i + 1]));
      logp = logp + log_likelihood_bernoulli(alpha, s[(size_t)i]);
    }
    Value alpha_x = out_.forward(store_, t, to_pm1(s[0]));
    logp = logp + log_likelihood_bernoulli(alpha_x, t.constant(x_));
    return logq - logp;
  }

  std::vector<int> tracked_param_ids() override { return inference_ids_; }
  Tensor baseline_input() const override {
    Tensor in = to_pm1(x_);
    for (size_t i = 0; i < in.data.size(); ++i) in.data[i] -= center_.data[i];
    return in;
  }
  double display_objective(double f) const override { return -f; }

  const Tensor& input() const { return x_; }
  const SbnSpec& spec() const { return spec_; }

 private:
  Value broadcast_prior(Tape& t) { return store_.leaf(t, prior_id_); }

  SbnSpec spec_;
  ParamStore store_;
  std::vector<DenseBlock> inf_, gen_;
  DenseBlock out_;
  std::vector<int> inference_ids_;
  int prior_id_ = -1;
  Tensor center_, x_;
};

// ---------------------------------------------------------------------------
// Structured prediction: sample b ~ p(b | c), score log p(x | b).
// ---------------------------------------------------------------------------

class StructPredModel : public StochasticModel {
 public:
  StructPredModel(int context_dim, int target_dim, int layers, int units, DetKind det,
                  int det_width, const Tensor& context_mean, const Tensor& target_mean,
                  RngStream& rng)
      : context_dim_(context_dim), target_dim_(target_dim), layers_(layers), units_(units) {
    require(layers >= 1, "structpred needs at least one stochastic layer");
    require((int64_t)context_dim == context_mean.shape.numel(), "context mean dim mismatch");
    require((int64_t)target_dim == target_mean.shape.numel(), "target mean dim mismatch");
    center_ = Tensor{Shape{(int64_t)context_dim}};
    for (int64_t i = 0; i < context_dim; ++i)
      center_.at(i) = 2.0 * clamp(context_mean.at(i), 1e-2, 1.0 - 1e-2) - 1.0;
    Tensor out_bias{Shape{(int64_t)target_dim}};
    for (int64_t i = 0; i < target_dim; ++i)
      out_bias.at(i) = logit(clamp(target_mean.at(i), 1e-2, 1.0 - 1e-2));

    for (int i = 0; i < layers; ++i) {
      const int in = (i == 0) ? context_dim : units;
      chain_.push_back(DenseBlock::make(store_, "pb" + std::to_string(i), in, units, det,
                                        det_width, rng));
      for (int id : chain_.back().ids) chain_ids_.push_back(id);
    }
    out_ = DenseBlock::make(store_, "out", units, target_dim, det, det_width, rng, &out_bias);
    c_ = Tensor::zeros(Shape{(int64_t)context_dim});
    x_ = Tensor::zeros(Shape{(int64_t)target_dim});
  }

  void set_datum(const Tensor& context, const Tensor& target) {
    require(context.shape.numel() == (int64_t)context_dim_, "context dim mismatch");
    require(target.shape.numel() == (int64_t)target_dim_, "target dim mismatch");
    c_ = context;
    x_ = target;
  }

  ParamStore& store() override { return store_; }
  int num_layers() const override { return layers_; }
  int units(int) const override { return units_; }

  Value layer_logits(Tape& t, int layer, const Value* prev) override {
    if (layer == 0) return chain_[0].forward(store_, t, t.constant(baseline_input()));
    require(prev != nullptr, "structpred needs the previous sample");
    return chain_[(size_t)layer].forward(store_, t, to_pm1(*prev));
  }

  Value objective(Tape& t, std::span<const Value> s) override {
    require((int)s.size() == layers_, "structpred objective needs one sample per layer");
    Value alpha_x = out_.forward(store_, t, to_pm1(s[(size_t)layers_ - 1]));
    return -log_likelihood_bernoulli(alpha_x, t.constant(x_));
  }

  std::vector<int> tracked_param_ids() override { return chain_ids_; }
  Tensor baseline_input() const override {
    Tensor in = to_pm1(c_);
    for (size_t i = 0; i < in.data.size(); ++i) in.data[i] -= center_.data[i];
    return in;
  }
  double display_objective(double f) const override { return -f; }

 private:
  int context_dim_, target_dim_, layers_, units_;
  ParamStore store_;
  std::vector<DenseBlock> chain_;
  DenseBlock out_;
  std::vector<int> chain_ids_;
  Tensor center_, c_, x_;
};

// ---------------------------------------------------------------------------
// Multisample importance-weighted bound (evaluation only):
//   log (1/k) sum_j exp( log p(x, b_j) - log q(b_j | x) ),  b_j ~ q(b | x).
// ---------------------------------------------------------------------------

inline double multisample_bound(SbnModel& m, int k, RngStream& rng) {
  require(k >= 1, "multisample bound needs k >= 1");
  Tape t;
  std::vector<double> logw((size_t)k);
  std::vector<Value> samples;
  samples.reserve((size_t)m.num_layers());
  for (int j = 0; j < k; ++j) {
    t.reset();
    samples.clear();
    Value prev;
    for (int i = 0; i < m.num_layers(); ++i) {
      Value alpha = m.layer_logits(t, i, i == 0 ? nullptr : &prev);
      Tensor av = alpha.value();
      Tensor b{av.shape};
      for (size_t q = 0; q < av.data.size(); ++q)
        b.data[q] = (rng.uniform() < sigmoid(av.data[q])) ? 1.0 : 0.0;
      Value bc = t.constant(b);
      samples.push_back(bc);
      prev = bc;
    }
    // objective() is logq - logp, so the log importance weight is its negation.
    logw[(size_t)j] = -m.objective(t, samples).scalar();
  }
  double mx = logw[0];
  for (double v : logw) mx = std::max(mx, v);
  double acc = 0.0;
  for (double v : logw) acc += std::exp(v - mx);
  return mx + std::log(acc / (double)k);
}

}  // namespace discgrad
