#include <gtest/gtest.h>

#include "styleguard/metrics.hpp"
#include "test_support.hpp"

using namespace sguard;

namespace {

FeatureMatrix column(std::initializer_list<double> v) {
  FeatureMatrix m(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

FeatureMatrix random_matrix(Rng& rng, int rows, int cols, double shift = 0.0) {
  FeatureMatrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal() + shift;
  return m;
}

/// Exhaustive reference: sort all distances for every real point.
double brute_precision(const FeatureMatrix& real, const FeatureMatrix& gen, int k) {
  std::vector<double> radius;
  for (Eigen::Index i = 0; i < real.rows(); ++i) {
    std::vector<double> d;
    for (Eigen::Index j = 0; j < real.rows(); ++j) {
      if (i == j) continue;
      double s = 0.0;
      for (Eigen::Index c = 0; c < real.cols(); ++c) s += (real(i, c) - real(j, c)) * (real(i, c) - real(j, c));
      d.push_back(std::sqrt(s));
    }
    std::sort(d.begin(), d.end());
    radius.push_back(d[static_cast<std::size_t>(k - 1)]);
  }
  int hits = 0;
  for (Eigen::Index g = 0; g < gen.rows(); ++g) {
    bool in = false;
    for (Eigen::Index i = 0; i < real.rows(); ++i) {
      double s = 0.0;
      for (Eigen::Index c = 0; c < real.cols(); ++c) s += (gen(g, c) - real(i, c)) * (gen(g, c) - real(i, c));
      in = in || std::sqrt(s) <= radius[static_cast<std::size_t>(i)];
    }
    hits += in ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(gen.rows());
}

}  // namespace

TEST(Fid, UnivariateClosedForm) {
  // unbiased fits: a has mean 0, variance 1; b has mean 1, variance 1
  const FeatureMatrix a = column({-1.0, 0.0, 1.0});
  const FeatureMatrix b = column({0.0, 1.0, 2.0});
  EXPECT_NEAR(fid(a, b), 1.0, 1e-12);

  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const FeatureMatrix x = random_matrix(rng, 5 + trial, 1, rng.normal());
    FeatureMatrix y = random_matrix(rng, 7 + trial, 1) * (0.5 + rng.uniform()) ;
    y.array() += rng.normal();
    auto fit = [](const FeatureMatrix& m, double& mu, double& sd) {
      mu = m.mean();
      double s = 0.0;
      for (Eigen::Index i = 0; i < m.rows(); ++i) s += (m(i, 0) - mu) * (m(i, 0) - mu);
      sd = std::sqrt(s / static_cast<double>(m.rows() - 1));
    };
    double ma, sa, mb, sb;
    fit(x, ma, sa);
    fit(y, mb, sb);
    EXPECT_NEAR(fid(x, y), (ma - mb) * (ma - mb) + (sa - sb) * (sa - sb), 1e-6);
  }
}

TEST(Fid, IdenticalSymmetricAndNonNegative) {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const FeatureMatrix a = random_matrix(rng, 40, 6);
    const FeatureMatrix b = random_matrix(rng, 30, 6, 0.3);
    EXPECT_LE(fid(a, a), 1e-8);
    EXPECT_NEAR(fid(a, b), fid(b, a), 1e-8);
    EXPECT_GE(fid(a, b), 0.0);
  }
  // Rank-deficient covariance is legal.
  FeatureMatrix flat = random_matrix(rng, 10, 3);
  flat.col(2).setConstant(1.0);
  EXPECT_LE(fid(flat, flat), 1e-8);
  EXPECT_THROW(fid(random_matrix(rng, 3, 4), random_matrix(rng, 10, 4)), ContractError);
}

TEST(Precision, OneDimensionalExample) {
  EXPECT_DOUBLE_EQ(precision_knn(column({0.0, 1.0}), column({0.5, 3.0}), 1), 0.5);
}

TEST(Precision, MatchesBruteForceOnRandomInstances) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int d = rng.integer(1, 4);
    const int nr = rng.integer(2, 20);
    const int ng = rng.integer(1, 20);
    const int k = rng.integer(1, nr - 1);
    FeatureMatrix real = random_matrix(rng, nr, d);
    if (trial % 7 == 0) real.row(1) = real.row(0);  // duplicates give radius-0 spheres
    const FeatureMatrix gen = random_matrix(rng, ng, d, 0.5 * rng.normal());
    ASSERT_EQ(precision_knn(real, gen, k), brute_precision(real, gen, k)) << "trial " << trial;
  }
}

TEST(Precision, IdentityFarAwayAndMonotoneInK) {
  Rng rng(4);
  const FeatureMatrix real = random_matrix(rng, 15, 3);
  EXPECT_EQ(precision_knn(real, real, 1), 1.0);
  EXPECT_EQ(precision_knn(real, random_matrix(rng, 5, 3, 1000.0), 3), 0.0);
  const FeatureMatrix gen = random_matrix(rng, 25, 3, 1.0);
  double prev = 0.0;
  for (int k = 1; k < 15; ++k) {
    const double p = precision_knn(real, gen, k);
    EXPECT_GE(p, prev);
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
    prev = p;
  }
  EXPECT_THROW(precision_knn(real, gen, 15), ContractError);
  EXPECT_THROW(precision_knn(real, gen, 0), ContractError);
}

TEST(Ims, CosineExamplesAndScaleInvariance) {
  FeatureMatrix gen(1, 2);
  gen << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
  FeatureMatrix ref(2, 2);
  ref << 1.0, 0.5, 1.0, -0.5;  // mean (1, 0)
  EXPECT_NEAR(ims(gen, ref), std::sqrt(2.0) / 2.0, 1e-12);

  FeatureMatrix ortho(1, 2);
  ortho << 0.0, 3.0;
  EXPECT_NEAR(ims(ortho, ref), 0.0, 1e-12);
  EXPECT_NEAR(ims(ref.topRows(1), ref.topRows(1)), 1.0, 1e-12);

  Rng rng(5);
  const FeatureMatrix g = random_matrix(rng, 6, 4);
  const FeatureMatrix r = random_matrix(rng, 5, 4, 1.0);
  FeatureMatrix scaled = g;
  scaled.row(2) *= 7.5;
  EXPECT_NEAR(ims(g, r), ims(scaled, r), 1e-12);
  const double v = ims(g, r);
  EXPECT_GE(v, -1.0);
  EXPECT_LE(v, 1.0);
  EXPECT_THROW(ims(g, FeatureMatrix::Zero(2, 4)), NumericError);
}

TEST(SuccessRate, FractionOfPreferences) {
  std::vector<bool> prefs(50, false);
  for (int i = 0; i < 12; ++i) prefs[static_cast<std::size_t>(i) * 4] = true;
  EXPECT_DOUBLE_EQ(success_rate(prefs, 10, 5), 0.24);
  EXPECT_DOUBLE_EQ(success_rate(std::vector<bool>(6, true), 2, 3), 1.0);
  std::vector<bool> half(50, false);
  for (int i = 0; i < 25; ++i) half[static_cast<std::size_t>(i)] = true;
  EXPECT_DOUBLE_EQ(success_rate(half, 25, 2), 0.5);
  EXPECT_THROW(success_rate(prefs, 7, 7), ContractError);
}

TEST(FeatureExtractor, FixedAndDeterministic) {
  const Tensor imgs = sguard::testing::random_images(Shape{4, 3, 16, 16}, 6);
  const FeatureExtractor a, b;
  const FeatureMatrix fa = a(imgs);
  EXPECT_EQ(fa.rows(), 4);
  EXPECT_EQ(fa.cols(), a.dim());
  EXPECT_TRUE(fa == b(imgs));
  EXPECT_FALSE(fa == FeatureExtractor(99)(imgs));
}
