#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "masr/metric.hpp"

using masr::mahalanobis_sq;

TEST(Mahalanobis, HandValues) {
  // b = (1, 2), x - y = (3, -1): 1*9 + 4*1 = 13
  const std::vector<double> b{1.0, 2.0}, x{4.0, 0.0}, y{1.0, 1.0};
  EXPECT_DOUBLE_EQ(mahalanobis_sq(b, x, y), 13.0);
  EXPECT_DOUBLE_EQ(mahalanobis_sq(b, x, x), 0.0);
}

TEST(Mahalanobis, UnitMetricIsSquaredEuclidean) {
  const std::vector<double> b{1.0, 1.0, 1.0}, x{1.0, 2.0, 3.0}, y{0.0, 0.0, 0.0};
  EXPECT_DOUBLE_EQ(mahalanobis_sq(b, x, y), 14.0);
}

TEST(Mahalanobis, ShapeMismatchThrows) {
  const std::vector<double> b{1.0, 1.0}, x{1.0}, y{1.0, 2.0};
  EXPECT_THROW(mahalanobis_sq(b, x, y), masr::Error);
}

TEST(Mahalanobis, SignOfMetricIrrelevant) {
  const std::vector<double> b{-1.5, 0.5}, nb{1.5, -0.5}, x{0.3, -2.0}, y{1.0, 4.0};
  EXPECT_DOUBLE_EQ(mahalanobis_sq(b, x, y), mahalanobis_sq(nb, x, y));
}

TEST(Mahalanobis, GradientMatchesFiniteDifference) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> b(5), x(5), y(5);
    for (auto* v : {&b, &x, &y}) {
      for (double& e : *v) e = n(rng);
    }
    const auto g = masr::grad_mahalanobis_sq(b, x, y);
    const double h = 1e-6;
    for (std::size_t i = 0; i < 5; ++i) {
      for (auto [vec, grad] : {std::pair{&b, &g.db}, std::pair{&x, &g.dx}, std::pair{&y, &g.dy}}) {
        const double saved = (*vec)[i];
        (*vec)[i] = saved + h;
        const double up = mahalanobis_sq(b, x, y);
        (*vec)[i] = saved - h;
        const double down = mahalanobis_sq(b, x, y);
        (*vec)[i] = saved;
        EXPECT_NEAR((*grad)[i], (up - down) / (2 * h), 1e-6);
      }
    }
  }
}

TEST(Mahalanobis, AccumulateScalesAndSkipsEmptyOutputs) {
  const std::vector<double> b{2.0}, x{3.0}, y{1.0};
  std::vector<double> db{1.0}, dx{0.0};
  masr::accumulate_mahalanobis_sq_grad(b, x, y, 0.5, db, dx, {});
  // d/dx = 2 b^2 (x - y) = 16, d/db = 2 b (x - y)^2 = 16, both halved
  EXPECT_DOUBLE_EQ(dx[0], 8.0);
  EXPECT_DOUBLE_EQ(db[0], 1.0 + 8.0);
}
