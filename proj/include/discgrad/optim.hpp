#pragma once
// Adam with bias correction and per-group learning-rate multipliers, plus the
// EMA gradient-variance tracker behind every variance measurement here.

#include <vector>

#include "core.hpp"
#include "params.hpp"
#include "tape.hpp"

namespace discgrad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  // A large beta2 keeps the second-moment estimate stable enough for online
  // adaptation of the control-variate quantities; override for ablations.
  double beta2 = 0.99999;
  double eps = 1e-8;
  double model_mult = 1.0;
  double baseline_mult = 10.0;
  double control_mult = 10.0;

  double mult_for(Group g) const {
    switch (g) {
      case Group::model: return model_mult;
      case Group::baseline: return baseline_mult;
      case Group::control: return control_mult;
    }
    return 1.0;
  }
};

// Learning rates swept in the benchmark configs.
inline const std::vector<double>& lr_grid() {
  static const std::vector<double> grid{3e-5, 1e-4, 3e-4, 1e-3, 3e-3};
  return grid;
}

class Adam {
 public:
  Adam(ParamStore& store, AdamConfig cfg) : store_(&store), cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  long step_count() const { return step_; }

  // Applies one update. If any present gradient slot is non-finite the whole
  // step is rejected (no parameter moves) and an error names the offender.
  void step(const GradVec& g) {
    for (size_t i = 0; i < g.slots.size(); ++i) {
      if (g.slots[i].data.empty()) continue;
      if (!g.slots[i].all_finite()) {
        fail("adam step rejected: non-finite gradient for parameter '" + store_->name((int)i) +
             "' (group " + group_name(store_->group((int)i)) + ")");
      }
    }
    ++step_;
    double c1 = 1.0 - std::pow(cfg_.beta1, (double)step_);
    double c2 = 1.0 - std::pow(cfg_.beta2, (double)step_);
    m_.resize(std::max(m_.size(), g.slots.size()));
    v_.resize(std::max(v_.size(), g.slots.size()));
    for (size_t i = 0; i < g.slots.size(); ++i) {
      const Tensor& gi = g.slots[i];
      if (gi.data.empty()) continue;
      Tensor& p = store_->value((int)i);
      require(p.shape == gi.shape, "adam gradient shape mismatch for '" + store_->name((int)i) + "'");
      if (m_[i].data.empty()) {
        m_[i] = Tensor::zeros(p.shape);
        v_[i] = Tensor::zeros(p.shape);
      }
      double lr = cfg_.lr * cfg_.mult_for(store_->group((int)i));
      for (size_t k = 0; k < p.data.size(); ++k) {
        double gk = gi.data[k];
        m_[i].data[k] = cfg_.beta1 * m_[i].data[k] + (1.0 - cfg_.beta1) * gk;
        v_[i].data[k] = cfg_.beta2 * v_[i].data[k] + (1.0 - cfg_.beta2) * gk * gk;
        double mhat = m_[i].data[k] / c1;
        double vhat = v_[i].data[k] / c2;
        p.data[k] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  ParamStore* store_;
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  long step_ = 0;
};

// Per-component EMA of the first two moments of a gradient-estimate stream.
// Reported statistic: ln(mean over tracked components of max(m2 - m1^2, 0)).
class VarianceTracker {
 public:
  explicit VarianceTracker(double decay = 0.999) : decay_(decay) {
    require(decay > 0.0 && decay < 1.0, "variance tracker decay must be in (0,1)");
  }

  // Restrict the statistic to the given parameter slots (default: all seen).
  void set_filter(std::vector<int> ids) { filter_ = std::move(ids); }

  void update(const GradVec& g) {
    ++n_;
    m1_.resize(std::max(m1_.size(), g.slots.size()));
    m2_.resize(std::max(m2_.size(), g.slots.size()));
    for (size_t i = 0; i < g.slots.size(); ++i) {
      const Tensor& gi = g.slots[i];
      if (gi.data.empty()) continue;
      if (m1_[i].data.empty()) {
        m1_[i] = Tensor::zeros(gi.shape);
        m2_[i] = Tensor::zeros(gi.shape);
      }
      for (size_t k = 0; k < gi.data.size(); ++k) {
        m1_[i].data[k] = decay_ * m1_[i].data[k] + (1.0 - decay_) * gi.data[k];
        m2_[i].data[k] = decay_ * m2_[i].data[k] + (1.0 - decay_) * gi.data[k] * gi.data[k];
      }
    }
  }

  long updates() const { return n_; }

  // Sum over tracked components of max(m2 - m1^2, 0).
  double total_variance() const {
    double total = 0.0;
    visit([&](double var) { total += var; });
    return total;
  }

  double ln_variance() const {
    double total = 0.0;
    long count = 0;
    visit([&](double var) {
      total += var;
      ++count;
    });
    if (count == 0) return -std::numeric_limits<double>::infinity();
    return std::log(total / (double)count);
  }

 private:
  template <class F>
  void visit(F f) const {
    auto scan = [&](size_t i) {
      if (i >= m1_.size() || m1_[i].data.empty()) return;
      for (size_t k = 0; k < m1_[i].data.size(); ++k) {
        double var = m2_[i].data[k] - m1_[i].data[k] * m1_[i].data[k];
        f(var > 0.0 ? var : 0.0);
      }
    };
    if (!filter_.empty()) {
      for (int id : filter_) scan((size_t)id);
    } else {
      for (size_t i = 0; i < m1_.size(); ++i) scan(i);
    }
  }

  double decay_;
  std::vector<Tensor> m1_, m2_;
  std::vector<int> filter_;
  long n_ = 0;
};

}  // namespace discgrad
