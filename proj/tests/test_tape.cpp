#include <gtest/gtest.h>

#include <discgrad/fdiff.hpp>
#include <discgrad/rng.hpp>
#include <discgrad/tape.hpp>

using namespace discgrad;

namespace {

// One network touching every differentiable op, parameterized by a flat
// coordinate vector: w [3,4], x [4], b [3], s scalar -> 20 coordinates.
double all_ops_network(Tape& t, const std::vector<double>& coords, GradVec* grads) {
  Tensor w{Shape{3, 4}, std::vector<double>(coords.begin(), coords.begin() + 12)};
  Tensor x{Shape{4}, std::vector<double>(coords.begin() + 12, coords.begin() + 16)};
  Tensor b{Shape{3}, std::vector<double>(coords.begin() + 16, coords.begin() + 19)};
  Tensor s = Tensor::scalar(coords[19]);

  Value vw = t.leaf(0, w);
  Value vx = t.leaf(1, x);
  Value vb = t.leaf(2, b);
  Value vs = t.leaf(3, s);

  Value h = tanh(matmul(vw, vx) + vb);
  Value p = sigmoid(h);
  Value q = softplus(h - p);
  Value r = square(q) * p;
  Value d = r / (q + 1.5);
  Value e = log(q + 1.0);
  Value f = exp(-d);
  Value z2 = matmul(h, vw);
  Tensor mask{Shape{3}, {1.0, 0.0, 1.0}};
  Value sel = select(t.constant(mask), r, e + f);
  Value bs = broadcast_to(vs, Shape{3});
  Value out = mean(bs * sel) + sum(d) + mean(z2);

  if (grads) t.backward(out, *grads);
  return out.scalar();
}

std::vector<double> flatten(const GradVec& g) {
  std::vector<double> out;
  for (const auto& t : g.slots) out.insert(out.end(), t.data.begin(), t.data.end());
  return out;
}

}  // namespace

TEST(TapeForward, ElementaryValues) {
  Tape t;
  Value a = t.constant(3.0);
  Value b = t.constant(4.0);
  EXPECT_DOUBLE_EQ((a * b).scalar(), 12.0);
  EXPECT_DOUBLE_EQ(sigmoid(t.constant(0.0)).scalar(), 0.5);
  EXPECT_DOUBLE_EQ(softplus(t.constant(0.0)).scalar(), std::log(2.0));
  EXPECT_DOUBLE_EQ(tanh(t.constant(0.0)).scalar(), 0.0);

  Tensor m{Shape{2, 2}, {1, 2, 3, 4}};
  Tensor v{Shape{2}, {1, 1}};
  Value mv = matmul(t.constant(m), t.constant(v));
  EXPECT_EQ(mv.shape, Shape{2});
  EXPECT_DOUBLE_EQ(mv.value().at(0), 3.0);
  EXPECT_DOUBLE_EQ(mv.value().at(1), 7.0);
}

TEST(TapeForward, ShapeMismatchThrows) {
  Tape t;
  Value a = t.constant(Tensor{Shape{2, 3}, 1.0});
  Value b = t.constant(Tensor{Shape{2, 2}, 1.0});
  EXPECT_THROW(matmul(a, b), Error);
  EXPECT_THROW(a + b, Error);
  try {
    matmul(a, b);
    FAIL() << "expected throw";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
  }
}

TEST(TapeBackward, SquareAndSigmoid) {
  Tape t;
  Value x = t.leaf(0, Tensor::scalar(3.0));
  GradVec g;
  t.backward(square(x), g);
  EXPECT_DOUBLE_EQ(g.slots[0].item(), 6.0);

  Tape t2;
  Value y = t2.leaf(0, Tensor::scalar(0.0));
  GradVec g2;
  t2.backward(sigmoid(y), g2);
  EXPECT_DOUBLE_EQ(g2.slots[0].item(), 0.25);
}

TEST(TapeBackward, MatchesFiniteDifferenceOnRandomNetworks) {
  RngStream rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> coords(20);
    for (auto& c : coords) c = 3.0 * rng.uniform() - 1.5;

    Tape t;
    GradVec g;
    all_ops_network(t, coords, &g);
    auto analytic = flatten(g);

    auto fd = finite_diff_gradient(
        [](const std::vector<double>& c) {
          Tape tt(false);
          return all_ops_network(tt, c, nullptr);
        },
        coords);

    ASSERT_EQ(analytic.size(), fd.size());
    EXPECT_LT(max_rel_err(analytic, fd), 1e-5) << "trial " << trial;
  }
}

TEST(TapeBackward, Linearity) {
  RngStream rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tape t;
    Tensor x0{Shape{4}, {rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()}};
    Value x = t.leaf(0, x0);
    Value f = sum(square(x));
    Value g = mean(sigmoid(x));
    Value combo = f * 2.0 + g * 0.5;

    GradVec gf, gg, gc;
    t.backward(f, gf);
    t.backward(g, gg);
    t.backward(combo, gc);

    for (int i = 0; i < 4; ++i) {
      double expect = 2.0 * gf.slots[0].at(i) + 0.5 * gg.slots[0].at(i);
      EXPECT_NEAR(gc.slots[0].at(i), expect, 1e-15);
    }
  }
}

TEST(TapeBackward, DeterministicAndReusable) {
  std::vector<double> coords(20, 0.3);
  for (size_t i = 0; i < coords.size(); ++i) coords[i] += 0.01 * (double)i;

  Tape t;
  GradVec g1;
  double v1 = all_ops_network(t, coords, &g1);

  // Same tape, second backward: bitwise identical.
  // (all_ops_network already ran backward once; run again through the root.)
  Tape t2;
  GradVec g2;
  double v2 = all_ops_network(t2, coords, &g2);

  EXPECT_EQ(v1, v2);
  auto f1 = flatten(g1), f2 = flatten(g2);
  ASSERT_EQ(f1.size(), f2.size());
  for (size_t i = 0; i < f1.size(); ++i) EXPECT_EQ(f1[i], f2[i]);
}

TEST(TapeBackward, RepeatedBackwardSameRootAccumulatesIndependently) {
  Tape t;
  Value x = t.leaf(0, Tensor::scalar(2.0));
  Value y = square(x);
  GradVec a, b;
  t.backward(y, a);
  t.backward(y, b);
  EXPECT_DOUBLE_EQ(a.slots[0].item(), 4.0);
  EXPECT_DOUBLE_EQ(b.slots[0].item(), 4.0);
  // Accumulation into the same sink sums.
  t.backward(y, a);
  EXPECT_DOUBLE_EQ(a.slots[0].item(), 8.0);
}

TEST(TapeBackward, ScaleFactorWeightsGradient) {
  Tape t;
  Value x = t.leaf(0, Tensor::scalar(1.5));
  Value y = square(x);
  GradVec g;
  t.backward(y, g, -2.5);
  EXPECT_DOUBLE_EQ(g.slots[0].item(), -2.5 * 3.0);
}

TEST(TapeBackward, SelectRoutesGradientByMask) {
  Tape t;
  Tensor mask{Shape{3}, {1.0, 0.0, 1.0}};
  Value a = t.leaf(0, Tensor{Shape{3}, {1, 2, 3}});
  Value b = t.leaf(1, Tensor{Shape{3}, {4, 5, 6}});
  Value out = sum(select(t.constant(mask), a, b));
  GradVec g;
  t.backward(out, g);
  EXPECT_DOUBLE_EQ(g.slots[0].at(0), 1.0);
  EXPECT_DOUBLE_EQ(g.slots[0].at(1), 0.0);
  EXPECT_DOUBLE_EQ(g.slots[0].at(2), 1.0);
  EXPECT_DOUBLE_EQ(g.slots[1].at(0), 0.0);
  EXPECT_DOUBLE_EQ(g.slots[1].at(1), 1.0);
  EXPECT_DOUBLE_EQ(g.slots[1].at(2), 0.0);
}

TEST(TapeBackward, SharedLeafSlotSumsContributions) {
  Tape t;
  Value x1 = t.leaf(0, Tensor::scalar(2.0));
  Value x2 = t.leaf(0, Tensor::scalar(2.0));
  GradVec g;
  t.backward(x1 * x2, g);  // d(x^2)/dx when both factors share a slot
  EXPECT_DOUBLE_EQ(g.slots[0].item(), 4.0);
}

TEST(TapeChecks, NonFiniteDetectionTogglable) {
  Tape t;
  Value bad = t.constant(-1.0);
  EXPECT_THROW(log(bad), Error);
  try {
    Tape t2;
    log(t2.constant(-2.0));
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("log"), std::string::npos);
  }
  Tape relaxed(false);
  Value v = log(relaxed.constant(-1.0));
  EXPECT_TRUE(std::isnan(v.scalar()));
}

TEST(TapeArena, ResetKeepsResultsStableAcrossReuse) {
  Tape t;
  std::vector<double> coords(20, 0.25);
  GradVec g0;
  double v0 = all_ops_network(t, coords, &g0);
  for (int i = 0; i < 5; ++i) {
    t.reset();
    GradVec g;
    double v = all_ops_network(t, coords, &g);
    EXPECT_EQ(v, v0);
    EXPECT_EQ(flatten(g), flatten(g0));
  }
}

TEST(FiniteDiff, KnownGradients) {
  auto sumsq = [](const std::vector<double>& x) {
    double a = 0;
    for (double v : x) a += v * v;
    return a;
  };
  auto g = finite_diff_gradient(sumsq, {1.0, -2.0, 0.5});
  EXPECT_NEAR(g[0], 2.0, 1e-8);
  EXPECT_NEAR(g[1], -4.0, 1e-8);
  EXPECT_NEAR(g[2], 1.0, 1e-8);

  auto sig = [](const std::vector<double>& x) { return sigmoid(x[0]); };
  auto gs = finite_diff_gradient(sig, {0.0});
  EXPECT_NEAR(gs[0], 0.25, 1e-9);
}
