#include <gtest/gtest.h>

#include <discgrad/optim.hpp>
#include <discgrad/rng.hpp>

using namespace discgrad;

namespace {
GradVec grad1(double g) {
  GradVec v;
  v.accumulate(0, Shape::scalar(), &g, 1.0);
  return v;
}
}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParamStore store;
  store.add("w", Tensor::scalar(1.25));
  Adam opt(store, AdamConfig{});
  opt.step(grad1(0.0));
  EXPECT_DOUBLE_EQ(store.value(0).item(), 1.25);
}

TEST(Adam, MatchesHandComputedRecursion) {
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.beta1 = 0.9;
  cfg.beta2 = 0.999;
  cfg.eps = 1e-8;
  ParamStore store;
  store.add("w", Tensor::scalar(0.5));
  Adam opt(store, cfg);

  double p = 0.5, m = 0.0, v = 0.0;
  std::vector<double> grads{0.3, -0.2, 0.7};
  for (int t = 1; t <= 3; ++t) {
    double g = grads[(size_t)(t - 1)];
    m = cfg.beta1 * m + (1 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
    double mhat = m / (1 - std::pow(cfg.beta1, t));
    double vhat = v / (1 - std::pow(cfg.beta2, t));
    p -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    opt.step(grad1(g));
    EXPECT_NEAR(store.value(0).item(), p, 1e-15) << "step " << t;
  }
  // First step moved by approximately -lr * sign(g).
  EXPECT_NEAR(0.5 - cfg.lr * grads[0] / std::abs(grads[0]), 0.5 - cfg.lr, 1e-12);
}

TEST(Adam, ConstantGradientApproachesRatePerStep) {
  AdamConfig cfg;
  cfg.lr = 0.01;
  ParamStore store;
  store.add("w", Tensor::scalar(0.0));
  Adam opt(store, cfg);
  double prev = 0.0;
  double delta = 0.0;
  for (int i = 0; i < 500; ++i) {
    opt.step(grad1(2.5));
    delta = prev - store.value(0).item();
    prev = store.value(0).item();
  }
  EXPECT_NEAR(delta, cfg.lr, 0.01 * cfg.lr);
}

TEST(Adam, GroupMultipliers) {
  AdamConfig cfg;
  cfg.lr = 0.01;
  ParamStore store;
  store.add("w", Tensor::scalar(0.0), Group::model);
  store.add("c", Tensor::scalar(0.0), Group::baseline);
  store.add("eta", Tensor::scalar(0.0), Group::control);
  Adam opt(store, cfg);
  GradVec g;
  double one = 1.0;
  g.accumulate(0, Shape::scalar(), &one, 1.0);
  g.accumulate(1, Shape::scalar(), &one, 1.0);
  g.accumulate(2, Shape::scalar(), &one, 1.0);
  for (int i = 0; i < 200; ++i) opt.step(g);
  // Asymptotic per-step motion is lr * multiplier.
  EXPECT_NEAR(store.value(1).item() / store.value(0).item(), 10.0, 0.5);
  EXPECT_NEAR(store.value(2).item() / store.value(0).item(), 10.0, 0.5);
}

TEST(Adam, RejectsNonFiniteGradientNamingGroup) {
  ParamStore store;
  store.add("w", Tensor::scalar(1.0), Group::baseline);
  Adam opt(store, AdamConfig{});
  try {
    opt.step(grad1(std::nan("")));
    FAIL() << "expected rejection";
  } catch (const Error& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("w"), std::string::npos);
    EXPECT_NE(msg.find("baseline"), std::string::npos);
  }
  EXPECT_DOUBLE_EQ(store.value(0).item(), 1.0);
  EXPECT_EQ(opt.step_count(), 0);
}

TEST(Adam, SignPatternInvariantUnderGradientScaling) {
  RngStream rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    ParamStore a, b;
    Tensor init{Shape{5}};
    for (int k = 0; k < 5; ++k) init.at(k) = rng.uniform() - 0.5;
    a.add("w", init);
    b.add("w", init);
    AdamConfig cfg;
    cfg.eps = 1e-15;
    Adam oa(a, cfg), ob(b, cfg);
    Tensor g{Shape{5}};
    for (int k = 0; k < 5; ++k) g.at(k) = 2.0 * rng.uniform() - 1.0;
    GradVec ga, gb;
    ga.accumulate(0, g.shape, g.data.data(), 1.0);
    gb.accumulate(0, g.shape, g.data.data(), 1000.0);
    oa.step(ga);
    ob.step(gb);
    for (int k = 0; k < 5; ++k) {
      double da = a.value(0).at(k) - init.at(k);
      double db = b.value(0).at(k) - init.at(k);
      EXPECT_GT(da * db, 0.0) << "component " << k;
    }
  }
}

TEST(VarianceTracker, ConstantStreamGoesToZero) {
  VarianceTracker vt(0.99);
  for (int i = 0; i < 3000; ++i) vt.update(grad1(4.2));
  EXPECT_LT(vt.total_variance(), 1e-10);
}

TEST(VarianceTracker, CalibratedOnGaussianStream) {
  VarianceTracker vt(0.999);
  RngStream rng(9);
  for (int i = 0; i < 100000; ++i) vt.update(grad1(rng.normal()));
  EXPECT_NEAR(std::exp(vt.ln_variance()), 1.0, 0.10);
  EXPECT_GE(vt.total_variance(), 0.0);
}

TEST(VarianceTracker, LogGapBetweenScaledStreams) {
  VarianceTracker a(0.999), b(0.999);
  RngStream rng(21);
  for (int i = 0; i < 100000; ++i) {
    double z = rng.normal();
    a.update(grad1(z));
    b.update(grad1(std::sqrt(10.0) * rng.normal()));
    (void)z;
  }
  EXPECT_NEAR(b.ln_variance() - a.ln_variance(), std::log(10.0), 0.2);
}

TEST(VarianceTracker, FilterRestrictsComponents) {
  VarianceTracker vt(0.99);
  vt.set_filter({1});
  RngStream rng(33);
  for (int i = 0; i < 20000; ++i) {
    GradVec g;
    double a = rng.normal(), b = 10.0 * rng.normal();
    g.accumulate(0, Shape::scalar(), &a, 1.0);
    g.accumulate(1, Shape::scalar(), &b, 1.0);
    vt.update(g);
  }
  EXPECT_NEAR(std::exp(vt.ln_variance()), 100.0, 15.0);
}
