#pragma once

// Numeric univariate edge parametrisations: clamped B-splines (KAN edges) and
// Gaussian radial basis functions (FastKAN edges).

#include <cstddef>
#include <span>
#include <vector>

namespace kansr {

/// Closed interval [lo, hi].
struct Range {
  double lo = -1.0;
  double hi = 1.0;

  [[nodiscard]] double width() const { return hi - lo; }
  [[nodiscard]] double clamp(double x) const { return x < lo ? lo : (x > hi ? hi : x); }
  bool operator==(const Range&) const = default;
};

/// Global min/max over all entries of a row-major sample matrix. A degenerate
/// range is widened by 0.5 on each side. Throws ConfigError when no finite
/// value is present.
Range fit_grid_range(std::span<const double> values);

/// Nonzero basis functions at a point: values[k] belongs to basis index
/// first + k.
struct BasisWindow {
  std::size_t first = 0;
  std::vector<double> values;
  std::vector<double> derivs;
};

/// Clamped B-spline over a uniform grid. The grid resolution counts knot
/// intervals, so there are resolution + degree basis functions.
struct SplineBasis {
  int degree = 3;
  Range range;
  std::vector<double> knots;
  std::vector<double> coef;

  SplineBasis() = default;
  SplineBasis(Range r, std::size_t resolution, int degree = 3);

  [[nodiscard]] std::size_t size() const { return coef.size(); }
  [[nodiscard]] std::size_t resolution() const { return knots.size() - 2 * static_cast<std::size_t>(degree) - 1; }

  /// Index of the knot span containing x (x already clamped).
  [[nodiscard]] std::size_t find_span(double x) const;
  /// Nonzero basis values and their x-derivatives at x. Out-of-range points
  /// are clamped and report zero derivatives.
  void window(double x, BasisWindow& out) const;

  [[nodiscard]] double eval(double x) const;
  /// Value and dvalue/dx.
  [[nodiscard]] std::pair<double, double> eval_with_derivative(double x) const;
};

/// Gaussian radial basis: sum_i c_i exp(-((x - mu_i)/h)^2) with centres evenly
/// spaced over the range and bandwidth equal to the centre spacing.
struct RbfBasis {
  Range range;
  std::vector<double> centres;
  double bandwidth = 1.0;
  std::vector<double> coef;

  RbfBasis() = default;
  RbfBasis(Range r, std::size_t n_centres);

  [[nodiscard]] std::size_t size() const { return coef.size(); }
  void window(double x, BasisWindow& out) const;
  [[nodiscard]] double eval(double x) const;
  [[nodiscard]] std::pair<double, double> eval_with_derivative(double x) const;
};

/// Least-squares coefficients so that the basis approximates f on its range.
template <typename Basis, typename F>
std::vector<double> least_squares_coefficients(const Basis& basis, F&& f);

}  // namespace kansr

#include "kansr/detail/basis_fit.hpp"
