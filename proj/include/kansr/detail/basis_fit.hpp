#pragma once

#include <Eigen/Dense>

namespace kansr {

template <typename Basis, typename F>
std::vector<double> least_squares_coefficients(const Basis& basis, F&& f) {
  const std::size_t n = basis.size();
  const std::size_t samples = 8 * n;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(samples), static_cast<Eigen::Index>(n));
  Eigen::VectorXd b(static_cast<Eigen::Index>(samples));
  BasisWindow w;
  for (std::size_t s = 0; s < samples; ++s) {
    const double x = basis.range.lo + basis.range.width() * static_cast<double>(s) / static_cast<double>(samples - 1);
    basis.window(x, w);
    for (std::size_t k = 0; k < w.values.size(); ++k)
      a(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(w.first + k)) = w.values[k];
    b(static_cast<Eigen::Index>(s)) = f(x);
  }
  const Eigen::VectorXd c = a.colPivHouseholderQr().solve(b);
  return {c.data(), c.data() + c.size()};
}

}  // namespace kansr
