#include "kansr/basis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kansr/error.hpp"

namespace kansr {

Range fit_grid_range(std::span<const double> values) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : values) {
    if (!std::isfinite(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(lo <= hi)) throw ConfigError("fit_grid_range: no finite input values");
  if (lo == hi) return {lo - 0.5, hi + 0.5};
  return {lo, hi};
}

SplineBasis::SplineBasis(Range r, std::size_t resolution, int deg) : degree(deg), range(r) {
  if (resolution == 0) throw ConfigError("SplineBasis: resolution must be positive");
  if (deg < 0 || deg > 7) throw ConfigError("SplineBasis: degree must be in [0, 7]");
  const auto p = static_cast<std::size_t>(deg);
  knots.reserve(resolution + 2 * p + 1);
  for (std::size_t i = 0; i < p; ++i) knots.push_back(r.lo);
  for (std::size_t i = 0; i <= resolution; ++i)
    knots.push_back(i == resolution ? r.hi : r.lo + r.width() * static_cast<double>(i) / static_cast<double>(resolution));
  for (std::size_t i = 0; i < p; ++i) knots.push_back(r.hi);
  coef.assign(resolution + p, 0.0);
}

std::size_t SplineBasis::find_span(double x) const {
  const auto p = static_cast<std::size_t>(degree);
  const std::size_t g = resolution();
  const double t = (x - range.lo) / range.width() * static_cast<double>(g);
  auto idx = static_cast<std::ptrdiff_t>(std::floor(t));
  idx = std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(g) - 1);
  return static_cast<std::size_t>(idx) + p;
}

void SplineBasis::window(double x, BasisWindow& out) const {
  const auto p = static_cast<std::size_t>(degree);
  const bool outside = x < range.lo || x > range.hi;
  x = range.clamp(x);
  const std::size_t span = find_span(x);
  out.first = span - p;
  out.values.assign(p + 1, 0.0);
  out.derivs.assign(p + 1, 0.0);

  // Triangular table of basis values and knot differences.
  double ndu[8][8];
  double left[8];
  double right[8];
  ndu[0][0] = 1.0;
  for (std::size_t j = 1; j <= p; ++j) {
    left[j] = x - knots[span + 1 - j];
    right[j] = knots[span + j] - x;
    double saved = 0.0;
    for (std::size_t r = 0; r < j; ++r) {
      ndu[j][r] = right[r + 1] + left[j - r];
      const double temp = ndu[r][j - 1] / ndu[j][r];
      ndu[r][j] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu[j][j] = saved;
  }
  for (std::size_t r = 0; r <= p; ++r) out.values[r] = ndu[r][p];
  if (p == 0 || outside) return;
  const double dp = static_cast<double>(p);
  for (std::size_t r = 0; r <= p; ++r) {
    double d = 0.0;
    if (r >= 1) d += ndu[r - 1][p - 1] / ndu[p][r - 1];
    if (r <= p - 1) d -= ndu[r][p - 1] / ndu[p][r];
    out.derivs[r] = dp * d;
  }
}

double SplineBasis::eval(double x) const { return eval_with_derivative(x).first; }

std::pair<double, double> SplineBasis::eval_with_derivative(double x) const {
  thread_local BasisWindow w;
  window(x, w);
  double v = 0.0;
  double d = 0.0;
  for (std::size_t k = 0; k < w.values.size(); ++k) {
    v += coef[w.first + k] * w.values[k];
    d += coef[w.first + k] * w.derivs[k];
  }
  return {v, d};
}

RbfBasis::RbfBasis(Range r, std::size_t n_centres) : range(r) {
  if (n_centres < 2) throw ConfigError("RbfBasis: need at least two centres");
  centres.resize(n_centres);
  for (std::size_t i = 0; i < n_centres; ++i)
    centres[i] = r.lo + r.width() * static_cast<double>(i) / static_cast<double>(n_centres - 1);
  bandwidth = r.width() / static_cast<double>(n_centres - 1);
  coef.assign(n_centres, 0.0);
}

void RbfBasis::window(double x, BasisWindow& out) const {
  const bool outside = x < range.lo || x > range.hi;
  x = range.clamp(x);
  out.first = 0;
  out.values.resize(centres.size());
  out.derivs.resize(centres.size());
  for (std::size_t i = 0; i < centres.size(); ++i) {
    const double u = (x - centres[i]) / bandwidth;
    const double g = std::exp(-u * u);
    out.values[i] = g;
    out.derivs[i] = outside ? 0.0 : -2.0 * u / bandwidth * g;
  }
}

double RbfBasis::eval(double x) const { return eval_with_derivative(x).first; }

std::pair<double, double> RbfBasis::eval_with_derivative(double x) const {
  thread_local BasisWindow w;
  window(x, w);
  double v = 0.0;
  double d = 0.0;
  for (std::size_t k = 0; k < w.values.size(); ++k) {
    v += coef[k] * w.values[k];
    d += coef[k] * w.derivs[k];
  }
  return {v, d};
}

}  // namespace kansr
