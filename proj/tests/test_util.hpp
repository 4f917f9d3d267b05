#pragma once

#include <cmath>
#include <functional>

#include <Eigen/Core>

namespace tftest {

/// Central finite-difference gradient of a scalar field.
inline Eigen::VectorXd fd_gradient(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, double step = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd hi = x, lo = x;
    hi[i] += step;
    lo[i] -= step;
    g[i] = (f(hi) - f(lo)) / (2.0 * step);
  }
  return g;
}

/// Central finite-difference divergence of a vector field.
inline double fd_divergence(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, double step = 1e-5) {
  double div = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd hi = x, lo = x;
    hi[i] += step;
    lo[i] -= step;
    div += (f(hi)[i] - f(lo)[i]) / (2.0 * step);
  }
  return div;
}

/// Tensor-product Simpson quadrature of f over [lo, hi]^2.
inline double simpson2d(const std::function<double(double, double)>& f,
                        double lo, double hi, int cells = 400) {
  const int n = 2 * cells;  // even subdivision count
  const double h = (hi - lo) / n;
  auto weight = [n](int i) {
    if (i == 0 || i == n) return 1.0;
    return (i % 2 == 1) ? 4.0 : 2.0;
  };
  double total = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = lo + i * h;
    double row = 0.0;
    for (int j = 0; j <= n; ++j) {
      row += weight(j) * f(x, lo + j * h);
    }
    total += weight(i) * row;
  }
  return total * h * h / 9.0;
}

}  // namespace tftest
