#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "kansr/basis.hpp"
#include "kansr/error.hpp"
#include "oracles.hpp"

using namespace kansr;

TEST(Spline, SizeIsResolutionPlusDegree) {
  const SplineBasis s(Range{-1.0, 1.0}, 20);
  EXPECT_EQ(s.size(), 23u);
  EXPECT_EQ(s.resolution(), 20u);
}

TEST(Spline, PartitionOfUnity) {
  const SplineBasis s(Range{-2.0, 3.0}, 20);
  BasisWindow w;
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double x = -2.0 + 5.0 * i / 999.0;
    s.window(x, w);
    double sum = 0.0;
    for (double v : w.values) sum += v;
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(Spline, BasisMatchesCoxDeBoorRecursion) {
  const SplineBasis s(Range{0.0, 1.0}, 7);
  BasisWindow w;
  for (int i = 0; i <= 200; ++i) {
    const double x = i / 200.0;
    s.window(x, w);
    for (std::size_t j = 0; j < s.size(); ++j) {
      double lib = 0.0;
      if (j >= w.first && j < w.first + w.values.size()) lib = w.values[j - w.first];
      EXPECT_NEAR(lib, oracle::bspline(s.knots, j, s.degree, x), 1e-12) << "x=" << x << " j=" << j;
    }
  }
}

TEST(Spline, EvaluationMatchesDeBoor) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 20; ++rep) {
    SplineBasis s(Range{-1.5, 2.5}, 5 + rng() % 20);
    for (auto& c : s.coef) c = nd(rng);
    for (int i = 0; i < 1000; ++i) {
      const double x = -1.5 + 4.0 * i / 999.0;
      EXPECT_NEAR(s.eval(x), oracle::de_boor(s.knots, s.coef, s.degree, x), 1e-12);
    }
  }
}

TEST(Spline, DerivativeMatchesFiniteDifference) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd;
  SplineBasis s(Range{-1.0, 1.0}, 12);
  for (auto& c : s.coef) c = nd(rng);
  for (int i = 1; i < 100; ++i) {
    const double x = -0.99 + 1.98 * i / 100.0;
    const double h = 1e-6;
    const double fd = (s.eval(x + h) - s.eval(x - h)) / (2 * h);
    EXPECT_NEAR(s.eval_with_derivative(x).second, fd, 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Spline, OutOfRangeIsClampedWithZeroSlope) {
  SplineBasis s(Range{0.0, 1.0}, 6);
  for (std::size_t j = 0; j < s.size(); ++j) s.coef[j] = static_cast<double>(j * j);
  EXPECT_DOUBLE_EQ(s.eval(-3.0), s.eval(0.0));
  EXPECT_DOUBLE_EQ(s.eval(4.0), s.eval(1.0));
  EXPECT_EQ(s.eval_with_derivative(4.0).second, 0.0);
}

TEST(Spline, LeastSquaresReproducesCubic) {
  const SplineBasis s(Range{-2.0, 2.0}, 8);
  auto f = [](double x) { return 0.5 * x * x * x - x + 2.0; };
  SplineBasis fit = s;
  fit.coef = least_squares_coefficients(s, f);
  for (int i = 0; i <= 100; ++i) {
    const double x = -2.0 + 4.0 * i / 100.0;
    EXPECT_NEAR(fit.eval(x), f(x), 1e-8);
  }
}

TEST(Rbf, CentresAndBandwidth) {
  const RbfBasis r(Range{-1.0, 3.0}, 5);
  ASSERT_EQ(r.centres.size(), 5u);
  EXPECT_DOUBLE_EQ(r.centres.front(), -1.0);
  EXPECT_DOUBLE_EQ(r.centres.back(), 3.0);
  EXPECT_DOUBLE_EQ(r.bandwidth, 1.0);
  EXPECT_EQ(r.size(), 5u);
}

TEST(Rbf, EvaluationIsGaussianSum) {
  RbfBasis r(Range{0.0, 2.0}, 9);
  for (std::size_t i = 0; i < r.size(); ++i) r.coef[i] = std::sin(static_cast<double>(i));
  for (int k = 0; k <= 50; ++k) {
    const double x = 2.0 * k / 50.0;
    double ref = 0.0;
    double dref = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double z = (x - r.centres[i]) / r.bandwidth;
      ref += r.coef[i] * std::exp(-z * z);
      dref += r.coef[i] * std::exp(-z * z) * (-2.0 * z / r.bandwidth);
    }
    EXPECT_NEAR(r.eval(x), ref, 1e-12);
    EXPECT_NEAR(r.eval_with_derivative(x).second, dref, 1e-10);
  }
}

TEST(GridRange, DegenerateIsWidenedAndNonFiniteThrows) {
  const std::vector<double> same{2.0, 2.0, 2.0};
  const Range r = fit_grid_range(same);
  EXPECT_DOUBLE_EQ(r.lo, 1.5);
  EXPECT_DOUBLE_EQ(r.hi, 2.5);
  const std::vector<double> bad{std::numeric_limits<double>::quiet_NaN()};
  EXPECT_THROW(fit_grid_range(bad), ConfigError);
}
