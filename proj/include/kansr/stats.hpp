#pragma once

// Rank-based comparison of test-MSE distributions: one-sided Mann-Whitney U,
// Holm step-down adjustment, Cliff's delta, percentile bootstrap of the
// median difference, and median-reduction percentages.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace kansr::stats {

/// Midpoint of the two central order statistics for even sizes. Throws
/// std::invalid_argument on an empty sample.
double median(std::span<const double> v);

/// Linear-interpolation quantile of an ascending sample (type 7).
double quantile_sorted(std::span<const double> sorted, double q);

struct MwuResult {
  double u = 0.0;  // #(ref > other) + 0.5 * #(ties)
  double p = 1.0;  // P(U <= u) under exchangeability
  bool exact = false;
};

/// Largest combined size that uses exact enumeration.
inline constexpr std::size_t kExactMwuLimit = 12;

/// One-sided test of "ref tends to be smaller than other". Throws
/// std::invalid_argument when either sample is empty.
MwuResult mwu_one_sided(std::span<const double> ref, std::span<const double> other);

/// Exact permutation p-value by enumerating every split of the pooled sample.
double mwu_exact_p(std::span<const double> ref, std::span<const double> other);

std::vector<double> holm_adjust(std::span<const double> p);

/// (#{ref > other} - #{ref < other}) / (n m). Negative favours ref.
double cliffs_delta(std::span<const double> ref, std::span<const double> other);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Percentile interval of median(other*) - median(ref*) over B resamples
/// drawn independently within each group.
Interval bootstrap_median_diff_ci(std::span<const double> ref, std::span<const double> other, std::size_t B = 10000,
                                  double level = 0.95, std::uint64_t seed = 1);

/// 100 * (1 - med_best / med_baseline); empty when the baseline is not
/// positive and finite.
std::optional<double> reduction_pct(double med_best, double med_baseline);

/// "*", "**", "***" for p below 0.05, 0.01, 0.001; else "".
const char* stars(double p);

}  // namespace kansr::stats
