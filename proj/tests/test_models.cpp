#include <gtest/gtest.h>

#include <cmath>
#include <discgrad/fdiff.hpp>
#include <discgrad/models.hpp>
#include <discgrad/oracles.hpp>
#include <discgrad/rng.hpp>
#include <string>
#include <vector>

using namespace discgrad;

namespace {

double sp(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

int find_param(ParamStore& s, const std::string& name) {
  for (int id = 0; id < (int)s.size(); ++id)
    if (s.name(id) == name) return id;
  ADD_FAILURE() << "no parameter named " << name;
  return -1;
}

void set_param(ParamStore& s, const std::string& name, const Tensor& v) {
  int id = find_param(s, name);
  ASSERT_EQ(s.value(id).shape.numel(), v.shape.numel()) << name;
  Tensor t = v;
  t.shape = s.value(id).shape;
  s.value(id) = t;
}

// Evaluates the objective at fixed hard samples (one tensor per layer).
double eval_at(StochasticModel& m, const std::vector<Tensor>& bs) {
  Tape t;
  std::vector<Value> s;
  s.reserve(bs.size());
  for (const Tensor& b : bs) s.push_back(t.constant(b));
  return m.objective(t, s).scalar();
}

// Exact log-marginal of a single-stochastic-layer SBN by enumeration:
// log p(x) = log sum_b exp(log q(b|x) - f(b)) since f = log q - log p(x, b).
double enum_log_marginal(SbnModel& m) {
  EXPECT_EQ(m.num_layers(), 1);
  const int n = m.units(0);
  Tape t;
  Tensor alpha = [&] {
    t.reset();
    return m.layer_logits(t, 0, nullptr).value();
  }();
  std::vector<double> terms;
  for (int mask = 0; mask < (1 << n); ++mask) {
    Tensor b{Shape{(int64_t)n}};
    double logq = 0.0;
    for (int i = 0; i < n; ++i) {
      b.data[(size_t)i] = (mask >> i) & 1;
      logq += b.data[(size_t)i] * alpha.data[(size_t)i] - sp(alpha.data[(size_t)i]);
    }
    terms.push_back(logq - eval_at(m, {b}));
  }
  double mx = terms[0];
  for (double v : terms) mx = std::max(mx, v);
  double acc = 0.0;
  for (double v : terms) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

Tensor tensor1x1(double v) {
  Tensor t{Shape{(int64_t)1, (int64_t)1}};
  t.data[0] = v;
  return t;
}

}  // namespace

TEST(Toy, HardLossMatchesHandSquares) {
  ToyModel m(0.45);
  EXPECT_NEAR(eval_at(m, {Tensor::vec({0.0})}), 0.2025, 1e-15);
  EXPECT_NEAR(eval_at(m, {Tensor::vec({1.0})}), 0.3025, 1e-15);
}

TEST(Toy, ExpectedLossClosedFormAndDeterministicOptimum) {
  ToyModel m(0.45);
  m.set_alpha(0.0);  // theta = 1/2
  EXPECT_NEAR(m.exact_expected_loss(), 0.2525, 1e-12);
  EXPECT_NEAR(exact_gradient_enum(m).exact_objective, 0.2525, 1e-12);

  m.set_alpha(-40.0);  // theta -> 0: best deterministic choice for t < 1/2
  EXPECT_NEAR(m.exact_expected_loss(), 0.2025, 1e-12);

  m.set_alpha(logit(0.73));
  EXPECT_NEAR(exact_gradient_enum(m).exact_objective, m.exact_expected_loss(), 1e-12);
}

TEST(Elbo, MatchedDistributionsCollapseToLogMarginal) {
  SbnSpec spec;
  spec.stochastic_layers = 1;
  spec.units = 3;
  spec.det = DetKind::linear;
  spec.obs_dim = 4;
  const std::vector<double> means{0.3, 0.7, 0.5, 0.2};
  RngStream rng(91);
  SbnModel m(spec, Tensor::vec(means), rng);

  const Tensor beta = Tensor::vec({0.4, -0.7, 1.1});
  set_param(m.store(), "inf0.W", Tensor::zeros(Shape{3, 4}));
  set_param(m.store(), "inf0.c", beta);
  set_param(m.store(), "prior", beta);
  set_param(m.store(), "out.W", Tensor::zeros(Shape{4, 3}));

  const std::vector<double> x{1, 0, 0, 1};
  m.set_input(Tensor::vec(x));
  double logpx = 0.0;
  for (size_t i = 0; i < x.size(); ++i)
    logpx += x[i] * std::log(means[i]) + (1 - x[i]) * std::log(1 - means[i]);

  // The KL between posterior and prior factors cancels exactly, so the bound
  // is tight and independent of which latent configuration was drawn.
  for (std::vector<double> b : {std::vector<double>{0, 0, 0},
                                std::vector<double>{1, 0, 1},
                                std::vector<double>{1, 1, 1},
                                std::vector<double>{0, 1, 0}})
    EXPECT_NEAR(eval_at(m, {Tensor::vec(b)}), -logpx, 1e-12);
}

TEST(Elbo, OneLatentOneVisibleHandComputation) {
  SbnSpec spec;
  spec.stochastic_layers = 1;
  spec.units = 1;
  spec.det = DetKind::linear;
  spec.obs_dim = 1;
  RngStream rng(5);
  SbnModel m(spec, Tensor::vec({0.35}), rng);
  set_param(m.store(), "inf0.W", tensor1x1(0.8));
  set_param(m.store(), "inf0.c", Tensor::vec({-0.3}));
  set_param(m.store(), "prior", Tensor::vec({0.25}));
  set_param(m.store(), "out.W", tensor1x1(1.7));
  m.set_input(Tensor::vec({1.0}));

  // Input to the inference net is 2x - 1 centered by 2*mean - 1.
  const double aq = 0.8 * (2.0 * 1.0 - 1.0 - (2.0 * 0.35 - 1.0)) - 0.3;
  const double d = std::log(0.35 / 0.65);
  for (double b : {0.0, 1.0}) {
    const double o = 1.7 * (2.0 * b - 1.0) + d;
    const double hand =
        (b * aq - sp(aq)) - (b * 0.25 - sp(0.25)) - (1.0 * o - sp(o));
    EXPECT_NEAR(eval_at(m, {Tensor::vec({b})}), hand, 1e-12);
  }
}

TEST(Elbo, JensenGapAgainstEnumeratedLogMarginal) {
  SbnSpec spec;
  spec.stochastic_layers = 1;
  spec.units = 4;
  spec.det = DetKind::linear;
  spec.obs_dim = 3;
  RngStream rng(17);
  SbnModel m(spec, Tensor::vec({0.4, 0.55, 0.3}), rng);
  m.set_input(Tensor::vec({1, 0, 1}));

  const double bound = -exact_gradient_enum(m).exact_objective;
  const double logpx = enum_log_marginal(m);
  EXPECT_LE(bound, logpx + 1e-10);
  EXPECT_GT(logpx - bound, 1e-6);  // random init => q is not the posterior
}

TEST(Elbo, GradientMatchesFiniteDifferencesAtFixedSamples) {
  SbnSpec spec;
  spec.stochastic_layers = 2;
  spec.units = 3;
  spec.det = DetKind::tanh2;
  spec.det_width = 5;
  spec.obs_dim = 4;
  RngStream rng(23);
  SbnModel m(spec, Tensor::vec({0.3, 0.6, 0.45, 0.2}), rng);
  m.set_input(Tensor::vec({1, 0, 1, 1}));
  const Tensor b0 = Tensor::vec({1, 0, 1});
  const Tensor b1 = Tensor::vec({0, 1, 1});

  ParamStore& s = m.store();
  std::vector<double> flat;
  for (int id = 0; id < (int)s.size(); ++id)
    flat.insert(flat.end(), s.value(id).data.begin(), s.value(id).data.end());

  auto write_back = [&](const std::vector<double>& x) {
    size_t k = 0;
    for (int id = 0; id < (int)s.size(); ++id)
      for (double& v : s.value(id).data) v = x[k++];
  };
  auto fd = finite_diff_gradient(
      [&](const std::vector<double>& x) {
        write_back(x);
        return eval_at(m, {b0, b1});
      },
      flat);
  write_back(flat);

  Tape t;
  std::vector<Value> samples{t.constant(b0), t.constant(b1)};
  Value f = m.objective(t, samples);
  GradVec g;
  g.resize((size_t)s.size());
  t.backward(f, g);
  std::vector<double> ad;
  for (int id = 0; id < (int)s.size(); ++id) {
    const size_t n = s.value(id).data.size();
    if (g.slots[(size_t)id].data.empty())
      ad.insert(ad.end(), n, 0.0);
    else
      ad.insert(ad.end(), g.slots[(size_t)id].data.begin(), g.slots[(size_t)id].data.end());
  }
  EXPECT_LT(max_rel_err(ad, fd), 1e-5);
}

TEST(StructPred, SaturatedChainEqualsConditionalLikelihood) {
  RngStream rng(31);
  StructPredModel m(3, 4, 1, 2, DetKind::linear, 0, Tensor::vec({0.5, 0.3, 0.6}),
                    Tensor::vec({0.4, 0.4, 0.6, 0.5}), rng);
  set_param(m.store(), "pb0.W", Tensor::zeros(Shape{2, 3}));
  set_param(m.store(), "pb0.c", Tensor::vec({40.0, -40.0}));
  m.set_datum(Tensor::vec({1, 0, 1}), Tensor::vec({0, 1, 1, 0}));

  // The chain is deterministic at b* = (1, 0); the bound is log p(x | b*).
  Tape t;
  Tensor alpha = m.layer_logits(t, 0, nullptr).value();
  EXPECT_GT(sigmoid(alpha.data[0]), 1.0 - 1e-15);
  EXPECT_LT(sigmoid(alpha.data[1]), 1e-15);

  const Tensor bstar = Tensor::vec({1, 0});
  ParamStore& s = m.store();
  const Tensor& W = s.value(find_param(s, "out.W"));
  const Tensor& c = s.value(find_param(s, "out.c"));
  const std::vector<double> x{0, 1, 1, 0};
  double hand = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double o = W.data[(size_t)(i * 2 + 0)] * (2 * 1 - 1) +
                     W.data[(size_t)(i * 2 + 1)] * (2 * 0 - 1) + c.data[(size_t)i];
    hand += x[(size_t)i] * o - sp(o);
  }
  EXPECT_NEAR(eval_at(m, {bstar}), -hand, 1e-12);
  EXPECT_NEAR(exact_gradient_enum(m).exact_objective, -hand, 1e-12);
  EXPECT_NEAR(m.display_objective(eval_at(m, {bstar})), hand, 1e-12);
}

TEST(StructPred, JensenViaEnumeration) {
  RngStream rng(37);
  StructPredModel m(3, 3, 1, 4, DetKind::linear, 0, Tensor::vec({0.5, 0.4, 0.6}),
                    Tensor::vec({0.5, 0.5, 0.5}), rng);
  m.set_datum(Tensor::vec({1, 0, 1}), Tensor::vec({0, 1, 1}));

  const double expected_ll = -exact_gradient_enum(m).exact_objective;

  Tape t;
  Tensor alpha = m.layer_logits(t, 0, nullptr).value();
  std::vector<double> terms;
  for (int mask = 0; mask < 16; ++mask) {
    Tensor b{Shape{(int64_t)4}};
    double logpb = 0.0;
    for (int i = 0; i < 4; ++i) {
      b.data[(size_t)i] = (mask >> i) & 1;
      logpb += b.data[(size_t)i] * alpha.data[(size_t)i] - sp(alpha.data[(size_t)i]);
    }
    terms.push_back(logpb - eval_at(m, {b}));
  }
  double mx = terms[0];
  for (double v : terms) mx = std::max(mx, v);
  double acc = 0.0;
  for (double v : terms) acc += std::exp(v - mx);
  const double log_marginal = mx + std::log(acc);

  EXPECT_LE(expected_ll, log_marginal + 1e-10);
  EXPECT_GT(log_marginal - expected_ll, 1e-6);
}

TEST(StructPred, GradientMatchesFiniteDifferencesAtFixedSamples) {
  RngStream rng(41);
  StructPredModel m(3, 3, 2, 2, DetKind::tanh2, 4, Tensor::vec({0.5, 0.3, 0.6}),
                    Tensor::vec({0.4, 0.6, 0.5}), rng);
  m.set_datum(Tensor::vec({0, 1, 1}), Tensor::vec({1, 1, 0}));
  const Tensor b0 = Tensor::vec({1, 0});
  const Tensor b1 = Tensor::vec({0, 1});

  ParamStore& s = m.store();
  std::vector<double> flat;
  for (int id = 0; id < (int)s.size(); ++id)
    flat.insert(flat.end(), s.value(id).data.begin(), s.value(id).data.end());
  auto write_back = [&](const std::vector<double>& x) {
    size_t k = 0;
    for (int id = 0; id < (int)s.size(); ++id)
      for (double& v : s.value(id).data) v = x[k++];
  };
  auto fd = finite_diff_gradient(
      [&](const std::vector<double>& x) {
        write_back(x);
        return eval_at(m, {b0, b1});
      },
      flat);
  write_back(flat);

  Tape t;
  std::vector<Value> samples{t.constant(b0), t.constant(b1)};
  GradVec g;
  g.resize((size_t)s.size());
  t.backward(m.objective(t, samples), g);
  std::vector<double> ad;
  for (int id = 0; id < (int)s.size(); ++id) {
    const size_t n = s.value(id).data.size();
    if (g.slots[(size_t)id].data.empty())
      ad.insert(ad.end(), n, 0.0);
    else
      ad.insert(ad.end(), g.slots[(size_t)id].data.begin(), g.slots[(size_t)id].data.end());
  }
  EXPECT_LT(max_rel_err(ad, fd), 1e-5);
}

TEST(Multisample, SingleSampleEqualsBoundSampleForSample) {
  SbnSpec spec;
  spec.stochastic_layers = 2;
  spec.units = 3;
  spec.det = DetKind::linear;
  spec.obs_dim = 4;
  RngStream rng(47);
  SbnModel m(spec, Tensor::vec({0.3, 0.5, 0.7, 0.4}), rng);
  m.set_input(Tensor::vec({1, 1, 0, 0}));

  RngStream r1 = rng.fork(11);
  const double bound = multisample_bound(m, 1, r1);

  // Replay the identical uniform stream and rebuild the single sample by hand.
  RngStream r2 = rng.fork(11);
  Tape t;
  std::vector<Value> samples;
  Value prev;
  for (int i = 0; i < m.num_layers(); ++i) {
    Tensor av = m.layer_logits(t, i, i == 0 ? nullptr : &prev).value();
    Tensor b{av.shape};
    for (size_t q = 0; q < av.data.size(); ++q)
      b.data[q] = (r2.uniform() < sigmoid(av.data[q])) ? 1.0 : 0.0;
    prev = t.constant(b);
    samples.push_back(prev);
  }
  EXPECT_NEAR(bound, -m.objective(t, samples).scalar(), 1e-12);
}

TEST(Multisample, MoreSamplesTightenTheBoundOnAverage) {
  SbnSpec spec;
  spec.stochastic_layers = 1;
  spec.units = 3;
  spec.det = DetKind::linear;
  spec.obs_dim = 4;
  RngStream rng(53);
  SbnModel m(spec, Tensor::vec({0.3, 0.6, 0.5, 0.4}), rng);
  // Deliberately mismatch inference and generation so importance weights vary.
  ParamStore& s = m.store();
  for (const char* name : {"inf0.W", "out.W"})
    for (double& v : s.value(find_param(s, name)).data) v *= 4.0;
  set_param(s, "prior", Tensor::vec({0.8, -1.2, 0.5}));

  double mean_gap = 0.0;
  const int inputs = 100;
  for (int i = 0; i < inputs; ++i) {
    RngStream rx = rng.fork((uint64_t)(1000 + i));
    Tensor x{Shape{(int64_t)4}};
    for (auto& v : x.data) v = rx.uniform() < 0.5 ? 1.0 : 0.0;
    m.set_input(x);
    RngStream ra = rng.fork((uint64_t)(2000 + i));
    RngStream rb = rng.fork((uint64_t)(3000 + i));
    mean_gap += multisample_bound(m, 100, ra) - multisample_bound(m, 1, rb);
  }
  mean_gap /= (double)inputs;
  EXPECT_GT(mean_gap, 0.0);
}

TEST(Multisample, LargeSampleCountRecoversLogMarginal) {
  SbnSpec spec;
  spec.stochastic_layers = 1;
  spec.units = 4;
  spec.det = DetKind::linear;
  spec.obs_dim = 3;
  RngStream rng(59);
  SbnModel m(spec, Tensor::vec({0.4, 0.55, 0.3}), rng);
  m.set_input(Tensor::vec({0, 1, 1}));

  const double logpx = enum_log_marginal(m);
  RngStream rk = rng.fork(7);
  EXPECT_NEAR(multisample_bound(m, 10000, rk), logpx, 0.01);
}

TEST(Models, DisplayConventions) {
  ToyModel toy(0.45);
  EXPECT_DOUBLE_EQ(toy.display_objective(0.2025), 0.2025);

  SbnSpec spec;
  RngStream rng(61);
  SbnModel sbn(spec, Tensor::full(Shape{(int64_t)spec.obs_dim}, 0.5), rng);
  EXPECT_DOUBLE_EQ(sbn.display_objective(-1.5), 1.5);
}
