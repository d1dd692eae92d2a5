#pragma once
// Command-line front end.  Verbs:
//   toy       train the scalar toy problem (task presets, then config/flags)
//   train     train with the configured driver estimator
//   variance  train while probing several estimators on the shared trajectory
//   eval      train, then report a multisample evaluation bound per trial
//   selftest  quick in-process oracle and property checks
// Settings are layered: built-in defaults, then verb presets, then the
// --config file, then explicit flags.  run_cli takes argv order without the
// program name so tests can invoke verbs in-process.

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bench.hpp"
#include "config.hpp"
#include "fdiff.hpp"
#include "oracles.hpp"

namespace discgrad {

namespace cli_detail {

struct Flags {
  std::string config, out, estimator;
  uint64_t seed = 0;
  int trials = 0, steps = 0;
  double lambda = 0.0, eta = 0.0, lr = 0.0;
  bool adapt_lambda = false;
  std::map<std::string, std::vector<CLI::Option*>> opts;

  bool given(const std::string& name) const {
    const auto it = opts.find(name);
    if (it == opts.end()) return false;
    for (const CLI::Option* o : it->second)
      if (o->count() > 0) return true;
    return false;
  }
};

inline void add_common_flags(CLI::App* cmd, Flags& f) {
  f.opts["config"].push_back(
      cmd->add_option("--config", f.config, "configuration file (sectioned key=value)"));
  f.opts["seed"].push_back(cmd->add_option("--seed", f.seed, "run seed"));
  f.opts["trials"].push_back(cmd->add_option("--trials", f.trials, "number of trials"));
  f.opts["steps"].push_back(cmd->add_option("--steps", f.steps, "training steps per trial"));
  f.opts["out"].push_back(
      cmd->add_option("--out", f.out, "output path prefix; writes <out>.csv and <out>.jsonl"));
  f.opts["estimator"].push_back(
      cmd->add_option("--estimator", f.estimator, "driver estimator kind"));
  f.opts["lambda"].push_back(cmd->add_option("--lambda", f.lambda, "initial temperature"));
  f.opts["eta"].push_back(cmd->add_option("--eta", f.eta, "initial control-variate scaling"));
  f.opts["adapt-lambda"].push_back(cmd->add_option("--adapt-lambda", f.adapt_lambda,
                                                   "adapt the temperature online (true/false)"));
  f.opts["lr"].push_back(cmd->add_option("--lr", f.lr, "model learning rate"));
}

// --- selftest checks -------------------------------------------------------

inline bool check_enumeration_oracle() {
  ToyModel m(0.45);
  const EnumerationResult r = exact_gradient_enum(m);
  // d/dalpha E[(b-t)^2] = theta(1-theta)(1-2t); theta = 1/2 at alpha = 0.
  const bool ok = std::abs(r.exact_grad.slots[(size_t)m.alpha_id()].data[0] - 0.025) < 1e-12 &&
                  std::abs(r.prob_mass - 1.0) < 1e-12;
  return ok;
}

inline bool check_coupling_identity() {
  RngStream rng(101);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    Tape t;
    Tensor alpha{Shape{int64_t{4}}};
    for (auto& a : alpha.data) a = 6.0 * (rng.uniform() - 0.5);
    Tensor theta{alpha.shape};
    for (size_t k = 0; k < 4; ++k) theta.data[k] = sigmoid(alpha.data[k]);
    const Tensor u = draw_uniform(rng, 4);
    const Coupled c = couple_uv(u, theta);
    Value al = t.leaf(0, alpha);
    const Tensor z = sample_z(al, u).value();
    const Tensor zt = conditional_z(al, c.b, c.v).value();
    const Tensor b = hard_threshold(z);
    for (size_t k = 0; k < 4; ++k) {
      if (b.data[k] != c.b.data[k]) return false;
      worst = std::max(worst, rel_err(zt.data[k], z.data[k]));
    }
  }
  return worst <= 1e-9;
}

inline bool check_rebar_derivations_agree() {
  RngStream rng(55);
  for (int rep = 0; rep < 50; ++rep) {
    RngStream mr = rng.fork((uint64_t)rep);
    RandomNetModel m(4, 6, mr, 1.5, 0.5);
    EstimatorConfig c1;
    c1.kind = EstimatorKind::rebar;
    c1.lambda_init = 0.05 * std::pow(100.0, rng.uniform());
    c1.eta_init = 0.3 + 1.2 * rng.uniform();
    EstimatorConfig c2 = c1;
    c2.kind = EstimatorKind::rebar_alt;
    AdamConfig a;
    RngStream i1 = mr.fork(1), i2 = mr.fork(2), dr = mr.fork(3);
    Estimator e1(m, c1, a, i1), e2(m, c2, a, i2);
    const Draws d = e1.draw(dr);
    const GradEstimate g1 = e1.estimate(d), g2 = e2.estimate(d);
    for (size_t p = 0; p < g1.grads.slots.size(); ++p) {
      if (!g1.grads.set(p)) continue;
      for (size_t q = 0; q < g1.grads.slots[p].data.size(); ++q)
        if (rel_err(g1.grads.slots[p].data[q], g2.grads.slots[p].data[q]) > 1e-10) return false;
    }
  }
  return true;
}

inline bool check_unbiasedness_smoke() {
  RngStream mr(77);
  RandomNetModel m(3, 5, mr, 1.2, 0.4);
  const EnumerationResult exact = exact_gradient_enum(m);
  EstimatorConfig cfg;
  cfg.kind = EstimatorKind::rebar;
  cfg.lambda_init = 0.5;
  AdamConfig a;
  RngStream ir = mr.fork(1);
  Estimator est(m, cfg, a, ir);
  const int alpha = m.alpha_id();
  const size_t dim = (size_t)m.store().value(alpha).numel();
  const int64_t n = 10000;
  RngStream base(4242);
  MeanAccumulator acc;
  for (int64_t i = 0; i < n; ++i) {
    RngStream dr = base.fork((uint64_t)i);
    const GradEstimate g = est.estimate(est.draw(dr));
    acc.add(g.grads.slots[(size_t)alpha].data.data(), dim);
  }
  for (size_t q = 0; q < dim; ++q) {
    const double se = std::sqrt(acc.m2[q] / (double)(n - 1) / (double)n);
    if (std::abs(acc.mean[q] - exact.exact_grad.slots[(size_t)alpha].data[q]) > 5.0 * se + 1e-12)
      return false;
  }
  return true;
}

inline bool check_modified_relaxation_limit() {
  ToyModel m(0.45, 2, 0.3);
  EstimatorConfig cm;
  cm.kind = EstimatorKind::rebar_modified;
  cm.lambda_init = 1e6;
  EstimatorConfig cs;
  cs.kind = EstimatorKind::simple_muprop;
  AdamConfig a;
  RngStream i1(5), i2(6);
  Estimator em(m, cm, a, i1), es(m, cs, a, i2);
  RngStream dr(900);
  for (int i = 0; i < 50; ++i) {
    const Draws d = em.draw(dr);
    const GradEstimate gm = em.estimate(d), gs = es.estimate(d);
    const size_t p = (size_t)m.alpha_id();
    for (size_t q = 0; q < gm.grads.slots[p].data.size(); ++q)
      if (rel_err(gm.grads.slots[p].data[q], gs.grads.slots[p].data[q]) > 1e-3) return false;
  }
  return true;
}

inline bool check_dataset_determinism() {
  const Dataset a = synthetic_dataset(12, 200, 3);
  const Dataset b = synthetic_dataset(12, 200, 3);
  if (a.train.size() != b.train.size() || a.train.size() != 160) return false;
  for (size_t i = 0; i < a.train.size(); ++i)
    if (a.train[i].data != b.train[i].data) return false;
  const Tensor m = pixel_mean(a.train);
  for (double v : m.data)
    if (v <= 0.0 || v >= 1.0) return false;
  return true;
}

inline bool check_config_roundtrip() {
  RunConfig c;
  c.task = "gen";
  c.estimator = "rebar_coupled_multilayer";
  c.lr = 3e-4;
  c.lambda = 0.173;
  c.adapt_lambda = false;
  c.probes = "rebar,nvil";
  const RunConfig back = parse_config_text(c.to_ini());
  return back.serialize() == c.serialize() && config_hash_hex(back) == config_hash_hex(c);
}

inline int run_selftest() {
  struct Check {
    const char* name;
    bool (*fn)();
  };
  const Check checks[] = {
      {"enumeration-oracle", check_enumeration_oracle},
      {"coupling-identity", check_coupling_identity},
      {"rebar-derivations-agree", check_rebar_derivations_agree},
      {"unbiasedness-smoke", check_unbiasedness_smoke},
      {"modified-relaxation-limit", check_modified_relaxation_limit},
      {"dataset-determinism", check_dataset_determinism},
      {"config-roundtrip", check_config_roundtrip},
  };
  int failures = 0;
  for (const Check& c : checks) {
    bool ok = false;
    std::string err;
    try {
      ok = c.fn();
    } catch (const std::exception& e) {
      err = e.what();
    }
    if (ok) {
      std::printf("selftest %s: PASS\n", c.name);
    } else {
      ++failures;
      std::printf("selftest %s: FAIL%s%s\n", c.name, err.empty() ? "" : " — ", err.c_str());
    }
  }
  std::printf("selftest: %d/%d passed\n", (int)(sizeof(checks) / sizeof(checks[0])) - failures,
              (int)(sizeof(checks) / sizeof(checks[0])));
  return failures == 0 ? 0 : 1;
}

}  // namespace cli_detail

// args = argv[1..] in natural order.  Returns a process exit code.
inline int run_cli(std::vector<std::string> args) {
  using cli_detail::Flags;
  CLI::App app{"discrete-latent gradient estimator benchmark"};
  app.require_subcommand(1);
  Flags f;

  CLI::App* toy = app.add_subcommand("toy", "train the scalar toy problem");
  CLI::App* train = app.add_subcommand("train", "train with the configured estimator");
  CLI::App* variance =
      app.add_subcommand("variance", "shared-trajectory variance measurement");
  CLI::App* eval = app.add_subcommand("eval", "train, then report an evaluation bound");
  app.add_subcommand("selftest", "run quick oracle and property checks");
  for (CLI::App* cmd : {toy, train, variance, eval}) cli_detail::add_common_flags(cmd, f);

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (app.get_subcommands().front()->get_name() == "selftest") return cli_detail::run_selftest();

  RunConfig cfg;
  if (toy->parsed()) {
    cfg.task = "toy";
    cfg.steps = 50000;
    cfg.lr = 1e-2;
    cfg.minibatch = 1;
    cfg.log_interval = 500;
  }
  try {
    if (!f.config.empty()) cfg = parse_config_text_onto(read_text_file(f.config), cfg);
    if (f.given("seed")) cfg.seed = f.seed;
    if (f.given("trials")) cfg.trials = f.trials;
    if (f.given("steps")) cfg.steps = f.steps;
    if (f.given("out")) cfg.out = f.out;
    if (f.given("estimator")) cfg.estimator = f.estimator;
    if (f.given("lambda")) cfg.lambda = f.lambda;
    if (f.given("eta")) cfg.eta = f.eta;
    if (f.given("adapt-lambda")) cfg.adapt_lambda = f.adapt_lambda;
    if (f.given("lr")) cfg.lr = f.lr;
    if (toy->parsed()) cfg.task = "toy";
    cfg.validate();

    const BenchOutput out = run_bench(cfg, /*with_probes=*/variance->parsed(),
                                      /*do_eval=*/eval->parsed());
    if (!cfg.out.empty()) {
      write_csv(cfg, out.trials, cfg.out + ".csv");
      write_jsonl(cfg, out.trials, cfg.out + ".jsonl");
    }
    int ok_trials = 0;
    for (const TrialOutput& t : out.trials) {
      if (!t.summary.failed) ++ok_trials;
      std::printf("trial %d [%s]: %s final=%.10g best=%.10g steps=%d lambda=%.10g eta=%.10g\n",
                  t.summary.trial, cfg.estimator.c_str(),
                  t.summary.failed ? "FAILED" : "ok", t.summary.final_objective,
                  t.summary.best_objective, t.summary.steps_completed, t.summary.lambda_final,
                  t.summary.eta_mean_final);
      if (t.has_eval)
        std::printf("trial %d eval: bound=%.10g (k=%d, inputs<=%d)\n", t.summary.trial,
                    t.eval_value, t.eval_k, t.eval_inputs);
    }
    if (!cfg.out.empty())
      std::printf("wrote %s.csv and %s.jsonl\n", cfg.out.c_str(), cfg.out.c_str());
    return ok_trials > 0 || cfg.trials == 0 ? 0 : 1;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}

}  // namespace discgrad
