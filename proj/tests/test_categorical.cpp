#include <gtest/gtest.h>

#include <discgrad/categorical.hpp>

#include "test_util.hpp"

using namespace discgrad;

namespace {
std::vector<double> uniforms(RngStream& rng, size_t n) {
  std::vector<double> u(n);
  for (auto& x : u) x = rng.uniform();
  return u;
}
}  // namespace

TEST(GumbelMax, KnownPerturbation) {
  // u = exp(-1) gives Gumbel noise -log(-log u) = 0, so z = log p.
  std::vector<double> p{0.2, 0.3, 0.5};
  std::vector<double> u(3, std::exp(-1.0));
  GumbelSample s = gumbel_max_sample(p, u);
  for (size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(s.z[i], std::log(p[i]), 1e-14);
  EXPECT_EQ(s.argmax, 2);
}

TEST(GumbelMax, ArgmaxFrequenciesMatchProbabilities) {
  std::vector<double> p{0.1, 0.2, 0.3, 0.4};
  RngStream rng(5150);
  const int n = 100000;
  std::vector<long> counts(p.size(), 0);
  for (int i = 0; i < n; ++i) {
    auto u = uniforms(rng, p.size());
    ++counts[(size_t)gumbel_max_sample(p, u).argmax];
  }
  for (size_t i = 0; i < p.size(); ++i) {
    double freq = (double)counts[i] / n;
    double se = std::sqrt(p[i] * (1 - p[i]) / n);
    EXPECT_NEAR(freq, p[i], 4 * se) << "category " << i;
  }
}

TEST(GumbelMax, RejectsInvalidSimplex) {
  EXPECT_THROW(gumbel_max_sample({0.5, 0.6}, {0.5, 0.5}), Error);
  EXPECT_THROW(gumbel_max_sample({1.0}, {0.5}), Error);
  EXPECT_THROW(gumbel_max_sample({0.5, 0.5, 0.0}, {0.5, 0.5, 0.5}), Error);
}

TEST(TruncatedGumbel, HotCoordinateAndDomination) {
  std::vector<double> p{0.25, 0.25, 0.5};
  std::vector<double> v(3, std::exp(-1.0));
  auto z = truncated_gumbel_conditional(p, 1, v);
  EXPECT_NEAR(z[1], 0.0, 1e-14);

  RngStream rng(31337);
  for (int size = 2; size <= 10; ++size) {
    std::vector<double> probs(size);
    double s = 0;
    for (auto& x : probs) {
      x = 0.05 + rng.uniform();
      s += x;
    }
    for (auto& x : probs) x /= s;
    for (int i = 0; i < 2000; ++i) {
      int k = (int)rng.below(size);
      auto zz = truncated_gumbel_conditional(probs, k, uniforms(rng, probs.size()));
      for (int j = 0; j < size; ++j) {
        ASSERT_LE(zz[(size_t)j], zz[(size_t)k]) << "size " << size;
      }
    }
  }
}

TEST(TruncatedGumbel, ConditionalMatchesTruncatedLaw) {
  // For i != k, z~_i given z~_k should follow Gumbel(log p_i) truncated at
  // z~_k: transforming by the truncated CDF must produce U(0,1).
  std::vector<double> p{0.2, 0.5, 0.3};
  RngStream rng(999);
  const int n = 100000;
  std::vector<double> pit;
  pit.reserve(2 * n);
  for (int i = 0; i < n; ++i) {
    int k = 1;
    auto z = truncated_gumbel_conditional(p, k, uniforms(rng, p.size()));
    for (size_t j = 0; j < p.size(); ++j) {
      if ((int)j == k) continue;
      double cdf = gumbel_cdf(z[j], std::log(p[j])) / gumbel_cdf(z[(size_t)k], std::log(p[j]));
      pit.push_back(cdf);
    }
  }
  EXPECT_LT(testutil::ks_vs_uniform(pit), 0.01);
}

TEST(TruncatedGumbel, AncestralJointMatchesGumbelMaxJoint) {
  // (k, z) from argmax of independent Gumbels vs (k from categorical, z~ from
  // the truncated conditional): per-coordinate marginals must agree.
  std::vector<double> p{0.2, 0.5, 0.3};
  RngStream rng(424242);
  const int n = 100000;
  std::vector<std::vector<double>> direct(p.size()), ancestral(p.size());
  std::vector<double> maxd, maxa;
  for (int i = 0; i < n; ++i) {
    GumbelSample s = gumbel_max_sample(p, uniforms(rng, p.size()));
    for (size_t j = 0; j < p.size(); ++j) direct[j].push_back(s.z[j]);
    maxd.push_back(s.z[(size_t)s.argmax]);

    GumbelSample pick = gumbel_max_sample(p, uniforms(rng, p.size()));
    auto zt = truncated_gumbel_conditional(p, pick.argmax, uniforms(rng, p.size()));
    for (size_t j = 0; j < p.size(); ++j) ancestral[j].push_back(zt[j]);
    maxa.push_back(zt[(size_t)pick.argmax]);
  }
  for (size_t j = 0; j < p.size(); ++j) {
    EXPECT_LT(testutil::ks_two_sample(direct[j], ancestral[j]), 0.01) << "coordinate " << j;
  }
  EXPECT_LT(testutil::ks_two_sample(maxd, maxa), 0.01);
}

TEST(GumbelCdf, ProbabilityIntegralTransform) {
  EXPECT_NEAR(gumbel_cdf(0.0, 0.0), std::exp(-1.0), 1e-15);
  RngStream rng(808);
  std::vector<double> pit;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    double g = -std::log(-std::log(rng.uniform()));
    pit.push_back(gumbel_cdf(g + 0.7, 0.7));
  }
  EXPECT_LT(testutil::ks_vs_uniform(pit), 0.012);
}
