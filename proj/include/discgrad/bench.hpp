#pragma once
// Benchmark harness.  Builds the task (toy scalar problem, generative belief
// net, or structured prediction), runs estimator-driven training trials, and
// measures paired gradient variance for several estimators along one shared
// trajectory: only the driver updates parameters, while probe estimators are
// evaluated every step on the same draws and the same parameters, each with
// private adaptation state, so their variance readings are directly
// comparable.
//
// Determinism contract: given (config, seed), every emitted value except
// wall_ms is reproduced bit-for-bit, regardless of how many worker threads
// execute the trials.  Each trial owns its model, optimizer, estimator, and
// RNG streams, all forked from the run seed by trial index.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "config.hpp"
#include "dataset.hpp"
#include "estimators.hpp"
#include "models.hpp"
#include "optim.hpp"
#include "telemetry.hpp"

namespace discgrad {

inline Tensor slice_tensor(const Tensor& x, int64_t off, int64_t n) {
  require(off >= 0 && n >= 0 && off + n <= x.shape.numel(), "slice out of range");
  Tensor out{Shape{n}};
  for (int64_t i = 0; i < n; ++i) out.data[(size_t)i] = x.data[(size_t)(off + i)];
  return out;
}

// Owns the model for one trial and adapts dataset elements to its inputs.
// For structured prediction the first half of each pattern is the context and
// the second half is the prediction target.
class TaskEnv {
 public:
  TaskEnv(const RunConfig& cfg, const Dataset* data, RngStream init_rng) : data_(data) {
    if (cfg.task == "toy") {
      toy_ = std::make_unique<ToyModel>(cfg.toy_target, 1, 0.0);
      return;
    }
    require(data != nullptr, "task '" + cfg.task + "' needs a dataset");
    require(!data->train.empty(), "dataset has an empty training split");
    const Tensor mean = pixel_mean(data->train);
    if (cfg.task == "gen") {
      SbnSpec spec;
      spec.stochastic_layers = cfg.layers;
      spec.units = cfg.units;
      spec.det = parse_det_kind(cfg.det);
      spec.det_width = cfg.det_width;
      spec.obs_dim = (int)data->dim;
      sbn_ = std::make_unique<SbnModel>(spec, mean, init_rng);
      sbn_->set_input(data->train[0]);
    } else {
      require(data->dim >= 2, "structured prediction needs at least two pixels");
      ctx_dim_ = data->dim / 2;
      tgt_dim_ = data->dim - ctx_dim_;
      sp_ = std::make_unique<StructPredModel>(
          (int)ctx_dim_, (int)tgt_dim_, cfg.layers, cfg.units, parse_det_kind(cfg.det),
          cfg.det_width, slice_tensor(mean, 0, ctx_dim_), slice_tensor(mean, ctx_dim_, tgt_dim_),
          init_rng);
      present_from(data->train[0]);
    }
  }

  StochasticModel& model() {
    if (toy_) return *toy_;
    if (sbn_) return *sbn_;
    return *sp_;
  }

  int64_t train_size() const { return data_ ? (int64_t)data_->train.size() : 1; }
  bool lower_is_better() const { return toy_ != nullptr; }

  // Presents the training element for an absolute element counter, cycling
  // through the training split in order.
  void present(int64_t counter) {
    if (toy_) return;
    present_from(data_->train[(size_t)(counter % train_size())]);
  }

  // Multisample evaluation bound averaged over validation inputs; the toy
  // task has a closed-form expected loss instead.
  double eval_bound(int k, int max_inputs, RngStream& rng) {
    if (toy_) return toy_->exact_expected_loss();
    const auto& valid = data_->valid.empty() ? data_->train : data_->valid;
    const size_t n = std::min<size_t>(valid.size(), (size_t)max_inputs);
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
      RngStream sub = rng.fork((uint64_t)i);
      if (sbn_) {
        sbn_->set_input(valid[i]);
        acc += multisample_bound(*sbn_, k, sub);
      } else {
        present_from(valid[i]);
        acc += struct_bound(k, sub);
      }
    }
    return acc / (double)n;
  }

 private:
  void present_from(const Tensor& x) {
    if (sbn_) {
      sbn_->set_input(x);
    } else {
      sp_->set_datum(slice_tensor(x, 0, ctx_dim_), slice_tensor(x, ctx_dim_, tgt_dim_));
    }
  }

  // log (1/k) sum_j p(x | b_j) with b_j sampled from the conditional chain.
  double struct_bound(int k, RngStream& rng) {
    Tape t;
    std::vector<double> logw((size_t)k);
    std::vector<Value> samples;
    for (int j = 0; j < k; ++j) {
      t.reset();
      samples.clear();
      Value prev;
      for (int i = 0; i < sp_->num_layers(); ++i) {
        Value alpha = sp_->layer_logits(t, i, i == 0 ? nullptr : &prev);
        Tensor av = alpha.value();
        Tensor b{av.shape};
        for (size_t q = 0; q < av.data.size(); ++q)
          b.data[q] = (rng.uniform() < sigmoid(av.data[q])) ? 1.0 : 0.0;
        prev = t.constant(b);
        samples.push_back(prev);
      }
      logw[(size_t)j] = -sp_->objective(t, samples).scalar();
    }
    double mx = logw[0];
    for (double v : logw) mx = std::max(mx, v);
    double acc = 0.0;
    for (double v : logw) acc += std::exp(v - mx);
    return mx + std::log(acc / (double)k);
  }

  const Dataset* data_;
  std::unique_ptr<ToyModel> toy_;
  std::unique_ptr<SbnModel> sbn_;
  std::unique_ptr<StructPredModel> sp_;
  int64_t ctx_dim_ = 0, tgt_dim_ = 0;
};

struct RowRecord {
  int step = 0;
  int trial = 0;
  std::string estimator;
  double objective = 0.0;
  double ln_var = 0.0;
  double lambda = 0.0;
  double eta_mean = 0.0;
  double wall_ms = 0.0;
};

struct TrialOutput {
  std::vector<RowRecord> rows;
  TrialSummary summary;
  bool has_eval = false;
  double eval_value = 0.0;
  int eval_k = 0;
  int eval_inputs = 0;
};

// One full training trial.  RNG protocol (all forks of RngStream(seed),
// then of the per-trial stream):
//   trial stream          = master.fork(trial)
//   model init            = trial.fork(0)
//   driver estimator init = trial.fork(1)
//   probe p init          = trial.fork(2 + p)
//   evaluation stream     = trial.fork(500)
//   step s stream         = trial.fork(1000 + s); element e = step.fork(100 + e)
// Minibatch elements walk the training split sequentially, so the data order
// carries no RNG state.  Probes never consume trial RNG and never touch
// model parameters, so a run's trajectory is identical with probes on or off.
inline TrialOutput run_trial(const RunConfig& cfg, const Dataset* data, int trial,
                             bool with_probes, bool do_eval) {
  TrialOutput out;
  out.summary.trial = trial;
  out.summary.estimator = cfg.estimator;

  RngStream master(cfg.seed);
  RngStream tr = master.fork((uint64_t)trial);
  RngStream model_rng = tr.fork(0);
  TaskEnv env(cfg, data, model_rng);
  StochasticModel& m = env.model();

  const AdamConfig acfg = adam_config(cfg);
  RngStream driver_rng = tr.fork(1);
  Estimator driver(m, estimator_config(cfg, parse_estimator_kind(cfg.estimator)), acfg,
                   driver_rng);
  Adam opt(m.store(), acfg);

  struct Probe {
    std::string name;
    std::unique_ptr<Estimator> est;
    VarianceTracker tracker{0.999};
  };
  std::vector<Probe> probes;
  VarianceTracker driver_tracker(0.999);
  driver_tracker.set_filter(m.tracked_param_ids());
  if (with_probes) {
    const auto names = cfg.probe_list();
    for (size_t p = 0; p < names.size(); ++p) {
      // The driver's own row already carries its variance column; a probe of
      // the same kind would duplicate the (step, estimator) key.
      if (names[p] == cfg.estimator) continue;
      Probe pr;
      pr.name = names[p];
      RngStream prng = tr.fork(2 + (uint64_t)p);
      pr.est = std::make_unique<Estimator>(
          m, estimator_config(cfg, parse_estimator_kind(names[p])), acfg, prng);
      pr.tracker.set_filter(m.tracked_param_ids());
      probes.push_back(std::move(pr));
    }
  }

  const int B = cfg.minibatch;
  const double invB = 1.0 / (double)B;
  const bool lower_better = env.lower_is_better();
  double best = lower_better ? std::numeric_limits<double>::infinity()
                             : -std::numeric_limits<double>::infinity();
  double last_obj = std::numeric_limits<double>::quiet_NaN();
  const auto t0 = std::chrono::steady_clock::now();
  int done = 0;

  try {
    std::vector<Draws> draws((size_t)B);
    std::vector<int64_t> idxs((size_t)B);
    for (int step = 0; step < cfg.steps; ++step) {
      RngStream srng = tr.fork(1000 + (uint64_t)step);
      GradEstimate mean;
      GradEstimate first;
      double fmean = 0.0;
      for (int e = 0; e < B; ++e) {
        idxs[(size_t)e] = (int64_t)step * B + e;
        env.present(idxs[(size_t)e]);
        RngStream erng = srng.fork(100 + (uint64_t)e);
        draws[(size_t)e] = make_draws(m, erng);
        GradEstimate est = driver.estimate(draws[(size_t)e]);
        mean.grads.add_scaled(est.grads, invB);
        mean.cv_grads.add_scaled(est.cv_grads, invB);
        mean.aux_grads.add_scaled(est.aux_grads, invB);
        mean.objective += invB * est.objective;
        mean.learning_signal += invB * est.learning_signal;
        mean.cv_value += invB * est.cv_value;
        fmean += invB * m.display_objective(est.objective);
        if (e == 0) first = std::move(est);
      }
      require(std::isfinite(fmean), "training objective is not finite");

      // Single-sample variance measurement at the current parameters: the
      // driver's first-element gradient and every probe on those same draws.
      driver_tracker.update(first.grads);
      if (!probes.empty()) {
        env.present(idxs[0]);
        for (Probe& pr : probes) {
          GradEstimate pe = pr.est->estimate(draws[0]);
          pr.tracker.update(pe.grads);
          pr.est->adapt(pe, draws[0]);
        }
      }

      // Adapt the driver's control state at the current parameters, then move
      // the model.
      driver.adapt_batched(mean, [&](double lam) {
        GradVec acc;
        for (int e = 0; e < B; ++e) {
          env.present(idxs[(size_t)e]);
          acc.add_scaled(driver.estimate_at(draws[(size_t)e], lam).grads, invB);
        }
        return acc;
      });
      opt.step(mean.grads);
      ++done;
      last_obj = fmean;
      best = lower_better ? std::min(best, fmean) : std::max(best, fmean);

      if ((step + 1) % cfg.log_interval == 0 || step + 1 == cfg.steps) {
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        out.rows.push_back({step + 1, trial, cfg.estimator, fmean, driver_tracker.ln_variance(),
                            driver.lambda(), driver.eta_mean(), ms});
        for (Probe& pr : probes)
          out.rows.push_back({step + 1, trial, pr.name, fmean, pr.tracker.ln_variance(),
                              pr.est->lambda(), pr.est->eta_mean(), ms});
      }
    }
  } catch (const Error&) {
    out.summary.failed = true;
  }

  out.summary.steps_completed = done;
  out.summary.final_objective = last_obj;
  out.summary.best_objective = best;
  out.summary.lambda_final = driver.lambda();
  out.summary.eta_mean_final = driver.eta_mean();

  if (do_eval && !out.summary.failed) {
    RngStream eval_rng = tr.fork(500);
    out.eval_k = 100;
    out.eval_inputs = 200;
    out.eval_value = env.eval_bound(out.eval_k, out.eval_inputs, eval_rng);
    out.has_eval = true;
  }
  return out;
}

inline std::optional<Dataset> build_dataset(const RunConfig& cfg) {
  if (cfg.task == "toy") return std::nullopt;
  if (cfg.source == "synthetic")
    return synthetic_dataset(cfg.obs_dim, cfg.data_count, cfg.binarize_seed);
  return dataset_from_idx(cfg.source, parse_binarize_rule(cfg.binarize_rule), cfg.binarize_seed);
}

struct BenchOutput {
  RunConfig cfg;
  std::vector<TrialOutput> trials;
};

// Runs all trials, in parallel worker threads when hardware allows.  Output
// is assembled in trial order after the fact, so the bytes written never
// depend on scheduling.
inline BenchOutput run_bench(const RunConfig& cfg, bool with_probes, bool do_eval = false) {
  cfg.validate();
  const std::optional<Dataset> data = build_dataset(cfg);
  const Dataset* dptr = data ? &*data : nullptr;

  auto guarded = [&](int t) -> TrialOutput {
    try {
      return run_trial(cfg, dptr, t, with_probes, do_eval);
    } catch (const std::exception&) {
      TrialOutput out;
      out.summary.trial = t;
      out.summary.estimator = cfg.estimator;
      out.summary.failed = true;
      return out;
    }
  };

  std::vector<TrialOutput> outs((size_t)cfg.trials);
  const unsigned hw = std::thread::hardware_concurrency();
  const int workers = (int)std::min<unsigned>((unsigned)cfg.trials, std::max(1u, hw));
  if (workers <= 1) {
    for (int t = 0; t < cfg.trials; ++t) outs[(size_t)t] = guarded(t);
  } else {
    std::atomic<int> next{0};
    auto work = [&] {
      for (int t; (t = next.fetch_add(1)) < cfg.trials;) outs[(size_t)t] = guarded(t);
    };
    std::vector<std::thread> pool;
    pool.reserve((size_t)workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  return {cfg, std::move(outs)};
}

inline void write_csv(const RunConfig& cfg, const std::vector<TrialOutput>& trials,
                      const std::string& path) {
  CsvWriter w(path, cfg);
  for (const TrialOutput& t : trials)
    for (const RowRecord& r : t.rows)
      w.row(r.step, r.trial, r.estimator, r.objective, r.ln_var, r.lambda, r.eta_mean, r.wall_ms);
  w.flush();
}

inline void write_jsonl(const RunConfig& cfg, const std::vector<TrialOutput>& trials,
                        const std::string& path) {
  JsonlWriter w(path, cfg);
  for (const TrialOutput& t : trials) w.summary(t.summary);
  for (const TrialOutput& t : trials) {
    if (!t.has_eval) continue;
    nlohmann::json j;
    j["record"] = "eval";
    j["trial"] = t.summary.trial;
    j["estimator"] = t.summary.estimator;
    j["bound"] = t.eval_value;
    j["samples_per_input"] = t.eval_k;
    j["max_inputs"] = t.eval_inputs;
    w.record(j);
  }
  w.flush();
}

}  // namespace discgrad
