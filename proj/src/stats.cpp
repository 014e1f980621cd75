#include "kansr/stats.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

#include "kansr/rng.hpp"

namespace kansr::stats {

namespace {

void require_nonempty(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("stats: empty sample");
}

double u_statistic(std::span<const double> ref, std::span<const double> other) {
  double u = 0.0;
  for (double r : ref)
    for (double o : other) {
      if (r > o) u += 1.0;
      else if (r == o) u += 0.5;
    }
  return u;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

double median(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty sample");
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  const std::size_t n = s.size();
  return n % 2 == 1 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
}

double quantile_sorted(std::span<const double> s, double q) {
  if (s.empty()) throw std::invalid_argument("quantile: empty sample");
  const double h = (static_cast<double>(s.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

double mwu_exact_p(std::span<const double> ref, std::span<const double> other) {
  require_nonempty(ref, other);
  const std::size_t n = ref.size();
  const std::size_t total = n + other.size();
  if (total > 20) throw std::invalid_argument("mwu_exact_p: sample too large to enumerate");
  std::vector<double> pooled(ref.begin(), ref.end());
  pooled.insert(pooled.end(), other.begin(), other.end());
  const double u_obs = u_statistic(ref, other);
  std::size_t hits = 0;
  std::size_t count = 0;
  std::vector<double> a;
  std::vector<double> b;
  for (std::uint32_t mask = 0; mask < (1u << total); ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) != n) continue;
    a.clear();
    b.clear();
    for (std::size_t i = 0; i < total; ++i) ((mask >> i) & 1u ? a : b).push_back(pooled[i]);
    ++count;
    // U takes half-integer values, so the comparison is exact
    if (u_statistic(a, b) <= u_obs) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(count);
}

MwuResult mwu_one_sided(std::span<const double> ref, std::span<const double> other) {
  require_nonempty(ref, other);
  MwuResult r;
  r.u = u_statistic(ref, other);
  const std::size_t n = ref.size();
  const std::size_t m = other.size();
  if (n + m <= kExactMwuLimit) {
    r.exact = true;
    r.p = mwu_exact_p(ref, other);
    return r;
  }
  std::vector<double> pooled(ref.begin(), ref.end());
  pooled.insert(pooled.end(), other.begin(), other.end());
  std::map<double, std::size_t> ties;
  for (double v : pooled) ++ties[v];
  double tie_term = 0.0;
  for (const auto& [v, t] : ties) {
    const auto td = static_cast<double>(t);
    tie_term += td * td * td - td;
  }
  const auto N = static_cast<double>(n + m);
  const double nm = static_cast<double>(n) * static_cast<double>(m);
  const double mu = nm / 2.0;
  const double var = nm / 12.0 * ((N + 1.0) - tie_term / (N * (N - 1.0)));
  if (var <= 0.0) {
    r.p = 1.0;
    return r;
  }
  const double z = (r.u - mu + 0.5) / std::sqrt(var);
  r.p = std::min(1.0, normal_cdf(z));
  return r;
}

std::vector<double> holm_adjust(std::span<const double> p) {
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<double> adj(m);
  double running = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double v = std::min(1.0, static_cast<double>(m - i) * p[order[i]]);
    running = std::max(running, v);
    adj[order[i]] = running;
  }
  return adj;
}

double cliffs_delta(std::span<const double> ref, std::span<const double> other) {
  require_nonempty(ref, other);
  long long gt = 0;
  long long lt = 0;
  for (double r : ref)
    for (double o : other) {
      if (r > o) ++gt;
      else if (r < o) ++lt;
    }
  return static_cast<double>(gt - lt) / (static_cast<double>(ref.size()) * static_cast<double>(other.size()));
}

Interval bootstrap_median_diff_ci(std::span<const double> ref, std::span<const double> other, std::size_t B,
                                  double level, std::uint64_t seed) {
  require_nonempty(ref, other);
  if (B == 0) throw std::invalid_argument("bootstrap: B must be positive");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("bootstrap: level must be in (0, 1)");
  Rng rng(derive_seed(seed, {0x626f6f74ULL}));
  std::uniform_int_distribution<std::size_t> pick_ref(0, ref.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_other(0, other.size() - 1);
  std::vector<double> a(ref.size());
  std::vector<double> b(other.size());
  std::vector<double> diffs(B);
  for (std::size_t k = 0; k < B; ++k) {
    for (double& v : a) v = ref[pick_ref(rng)];
    for (double& v : b) v = other[pick_other(rng)];
    diffs[k] = median(b) - median(a);
  }
  std::sort(diffs.begin(), diffs.end());
  const double tail = (1.0 - level) / 2.0;
  return {quantile_sorted(diffs, tail), quantile_sorted(diffs, 1.0 - tail)};
}

std::optional<double> reduction_pct(double med_best, double med_baseline) {
  if (!(med_baseline > 0.0) || !std::isfinite(med_baseline) || !std::isfinite(med_best)) return std::nullopt;
  return 100.0 * (1.0 - med_best / med_baseline);
}

const char* stars(double p) {
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return "";
}

}  // namespace kansr::stats
