#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "kansr/stats.hpp"
#include "oracles.hpp"

using namespace kansr::stats;

TEST(Median, OddEvenAndEmpty) {
  EXPECT_EQ(median(std::vector<double>{3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median(std::vector<double>{4.0, 1.0, 3.0, 2.0}), 2.5);
  EXPECT_THROW(median(std::vector<double>{}), std::invalid_argument);
  const std::vector<double> s{1.0, 2.0, 4.0, 8.0};
  EXPECT_DOUBLE_EQ(quantile_sorted(s, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(quantile_sorted(s, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile_sorted(s, 1.0), 8.0);
  EXPECT_DOUBLE_EQ(quantile_sorted(s, 0.25), 1.75);
}

TEST(Mwu, HandExamples) {
  // complete separation, 3 vs 3: one split out of 20 reaches U = 0
  const MwuResult r = mwu_one_sided(std::vector<double>{1, 2, 3}, std::vector<double>{4, 5, 6});
  EXPECT_EQ(r.u, 0.0);
  EXPECT_DOUBLE_EQ(r.p, 1.0 / 20.0);
  EXPECT_TRUE(r.exact);
  EXPECT_DOUBLE_EQ(mwu_one_sided(std::vector<double>{1, 2, 3, 4}, std::vector<double>{5, 6, 7, 8}).p, 1.0 / 70.0);
  EXPECT_DOUBLE_EQ(mwu_one_sided(std::vector<double>{4, 5, 6}, std::vector<double>{1, 2, 3}).p, 1.0);
  EXPECT_EQ(mwu_one_sided(std::vector<double>{1, 2}, std::vector<double>{2, 3}).u, 0.5);
  EXPECT_THROW(mwu_one_sided(std::vector<double>{}, std::vector<double>{1}), std::invalid_argument);
}

TEST(Mwu, ExactMatchesBruteForceForEveryPartition) {
  std::mt19937_64 rng(1);
  std::size_t checked = 0;
  for (std::size_t N = 2; N <= 8; ++N) {
    for (int rep = 0; rep < 3; ++rep) {
      // small integer values so ties occur
      std::vector<double> pooled(N);
      for (auto& v : pooled) v = static_cast<double>(rng() % 5);
      for (std::uint32_t mask = 1; mask + 1 < (1u << N); ++mask) {
        std::vector<double> ref;
        std::vector<double> other;
        for (std::size_t i = 0; i < N; ++i) ((mask >> i) & 1u ? ref : other).push_back(pooled[i]);
        const MwuResult r = mwu_one_sided(ref, other);
        ASSERT_TRUE(r.exact);
        ASSERT_EQ(r.u, oracle::u_from_ranks(ref, other));
        ASSERT_EQ(r.p, oracle::mwu_bruteforce_p(ref, other));
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 1000u);
}

TEST(Mwu, NormalApproximationTracksExact) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> a(8);
    std::vector<double> b(8);
    for (auto& v : a) v = nd(rng);
    for (auto& v : b) v = nd(rng) + 0.8;
    const MwuResult approx = mwu_one_sided(a, b);
    EXPECT_FALSE(approx.exact);
    worst = std::max(worst, std::abs(approx.p - mwu_exact_p(a, b)));
  }
  EXPECT_LT(worst, 0.05);
}

TEST(Mwu, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(3);
  std::lognormal_distribution<double> ln;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> a(10);
    std::vector<double> b(9);
    for (auto& v : a) v = ln(rng);
    for (auto& v : b) v = ln(rng);
    std::vector<double> la;
    std::vector<double> lb;
    for (double v : a) la.push_back(std::log10(v));
    for (double v : b) lb.push_back(std::log10(v));
    EXPECT_EQ(mwu_one_sided(a, b).p, mwu_one_sided(la, lb).p);
    EXPECT_EQ(cliffs_delta(a, b), cliffs_delta(la, lb));
  }
}

TEST(Holm, HandExampleAndMonotonicity) {
  const auto adj = holm_adjust(std::vector<double>{0.01, 0.02, 0.20});
  EXPECT_DOUBLE_EQ(adj[0], 0.03);
  EXPECT_DOUBLE_EQ(adj[1], 0.04);
  EXPECT_DOUBLE_EQ(adj[2], 0.20);
  const auto shuffled = holm_adjust(std::vector<double>{0.20, 0.01, 0.02});
  EXPECT_DOUBLE_EQ(shuffled[0], 0.20);
  EXPECT_DOUBLE_EQ(shuffled[1], 0.03);
  EXPECT_DOUBLE_EQ(shuffled[2], 0.04);
  // step-down keeps the adjusted values ordered and capped at 1
  const auto capped = holm_adjust(std::vector<double>{0.04, 0.03, 0.5, 0.6});
  EXPECT_DOUBLE_EQ(capped[1], 0.12);
  EXPECT_DOUBLE_EQ(capped[0], 0.12);
  EXPECT_DOUBLE_EQ(capped[2], 1.0);
  EXPECT_DOUBLE_EQ(capped[3], 1.0);
  EXPECT_TRUE(holm_adjust(std::vector<double>{}).empty());
}

TEST(Cliff, MatchesPairCountsOnRandomSamples) {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> a(1 + rng() % 9);
    std::vector<double> b(1 + rng() % 9);
    for (auto& v : a) v = static_cast<double>(rng() % 7);
    for (auto& v : b) v = static_cast<double>(rng() % 7);
    EXPECT_EQ(cliffs_delta(a, b), oracle::cliffs_pairs(a, b));
  }
  EXPECT_EQ(cliffs_delta(std::vector<double>{1}, std::vector<double>{2, 3}), -1.0);
}

TEST(Bootstrap, ConstantShiftIsCovered) {
  std::mt19937_64 rng(5);
  std::lognormal_distribution<double> ln(0.0, 1.0);
  int covered = 0;
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> a(15);
    for (auto& v : a) v = ln(rng);
    std::vector<double> b = a;
    for (auto& v : b) v += 0.7;
    const Interval ci = bootstrap_median_diff_ci(a, b, 2000, 0.95, static_cast<std::uint64_t>(rep));
    EXPECT_LE(ci.lo, ci.hi);
    covered += (ci.lo <= 0.7 && 0.7 <= ci.hi) ? 1 : 0;
  }
  EXPECT_GE(covered, 95);
}

TEST(Bootstrap, SeededAndValidated) {
  const std::vector<double> a{1, 2, 3, 4, 5};
  const std::vector<double> b{2, 4, 6, 8, 10};
  const Interval x = bootstrap_median_diff_ci(a, b, 500, 0.9, 3);
  const Interval y = bootstrap_median_diff_ci(a, b, 500, 0.9, 3);
  EXPECT_EQ(x.lo, y.lo);
  EXPECT_EQ(x.hi, y.hi);
  EXPECT_THROW(bootstrap_median_diff_ci(a, b, 0), std::invalid_argument);
  EXPECT_THROW(bootstrap_median_diff_ci(a, b, 10, 1.0), std::invalid_argument);
}

TEST(Reduction, TableArithmetic) {
  const auto r1 = reduction_pct(2.12e-2, 9.49e0);
  ASSERT_TRUE(r1.has_value());
  EXPECT_EQ(std::round(*r1 * 10.0) / 10.0, 99.8);
  const auto r2 = reduction_pct(3.05e-5, 2.17e-4);
  ASSERT_TRUE(r2.has_value());
  EXPECT_EQ(std::round(*r2 * 10.0) / 10.0, 85.9);
  EXPECT_FALSE(reduction_pct(1.0, 0.0).has_value());
  EXPECT_FALSE(reduction_pct(1.0, NAN).has_value());
  EXPECT_STREQ(stars(0.0005), "***");
  EXPECT_STREQ(stars(0.005), "**");
  EXPECT_STREQ(stars(0.03), "*");
  EXPECT_STREQ(stars(0.05), "");
}
