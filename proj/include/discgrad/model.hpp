#pragma once

#include <span>
#include <vector>

#include "discgrad/params.hpp"
#include "discgrad/tape.hpp"

namespace discgrad {

// A stochastic computation target: a chain of Bernoulli layers
//   p(b) = p(b_1) p(b_2 | b_1) ... p(b_L | b_{L-1})
// whose logits are produced layer by layer, plus a scalar objective f(b, theta)
// evaluated at per-layer sample vectors. Samples live in [0,1]: hard draws are
// exact 0/1 constants, relaxed draws are tape values in (0,1). Any remapping
// (e.g. to {-1,+1} at network inputs) is the concrete model's own business.
//
// The objective follows a minimization convention; models whose natural
// reading is "higher is better" (bounds) negate internally and undo the sign
// in display_objective().
class StochasticModel {
 public:
  virtual ~StochasticModel() = default;

  virtual ParamStore& store() = 0;
  virtual int num_layers() const = 0;
  virtual int units(int layer) const = 0;

  // Rank-1 logits (length units(layer)) for one stochastic layer, built on
  // `t`. `prev` is the previous layer's sample on the same tape; nullptr for
  // the first layer. Parameters enter as leaves keyed by their store ids, so
  // repeated calls on one tape accumulate gradients into the same slots.
  virtual Value layer_logits(Tape& t, int layer, const Value* prev) = 0;

  // Scalar objective at one sample per layer (hard constants or relaxed
  // values). May internally re-derive logits from the samples; that is how
  // explicit theta-dependence of f (e.g. a -log q term) enters the graph.
  virtual Value objective(Tape& t, std::span<const Value> samples) = 0;

  // Parameter ids whose gradient variance is worth tracking (score-bearing /
  // inference-side parameters). Defaults to every model-group parameter.
  virtual std::vector<int> tracked_param_ids() {
    return store().ids_in_group(Group::model);
  }

  // Centered conditioning input for input-dependent baselines; empty when the
  // model has no per-datum conditioning (a scalar baseline then remains).
  virtual Tensor baseline_input() const { return Tensor{Shape{int64_t{0}}}; }

  // Maps the internal minimization value to the reported objective.
  virtual double display_objective(double f) const { return f; }
};

// Total number of joint hard outcomes, or -1 on overflow past `cap`.
inline long long total_outcomes(const StochasticModel& m, long long cap) {
  long long total = 1;
  for (int i = 0; i < m.num_layers(); ++i) {
    for (int j = 0; j < m.units(i); ++j) {
      total *= 2;
      if (total > cap) return -1;
    }
  }
  return total;
}

}  // namespace discgrad
