#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>

#include <Eigen/Core>

namespace tflow {

/// Isotropic Gaussian observation model N(y; x, variance * I), evaluated
/// as a function of the sample x at a fixed conditioning value y.
struct GaussianLikelihood {
  Eigen::VectorXd y;
  double variance = 1.0;

  int dim() const { return static_cast<int>(y.size()); }
};

/// Floors and clipping that keep every importance weight bounded:
/// epsilon2 is added to look-ahead likelihood values (never to the
/// terminal likelihood), clip_norm caps the guidance gradient.
struct LikelihoodGuards {
  double epsilon2 = 1e-12;
  std::optional<double> clip_norm;
};

inline void validate(const GaussianLikelihood& lik) {
  if (lik.variance <= 0.0) {
    throw std::invalid_argument("likelihood variance must be positive");
  }
  if (lik.y.size() == 0) {
    throw std::invalid_argument("likelihood y must be non-empty");
  }
}

inline void validate(const LikelihoodGuards& guards) {
  if (!(guards.epsilon2 > 0.0)) {
    throw std::invalid_argument("epsilon2 must be positive");
  }
  if (guards.clip_norm && !(*guards.clip_norm > 0.0)) {
    throw std::invalid_argument("clip_norm must be positive when present");
  }
}

inline double log_likelihood(const GaussianLikelihood& lik,
                             const Eigen::VectorXd& x) {
  if (x.size() != lik.y.size()) {
    throw std::invalid_argument("log_likelihood: dimension mismatch");
  }
  const double d = static_cast<double>(x.size());
  return -0.5 * d * std::log(2.0 * M_PI * lik.variance) -
         (lik.y - x).squaredNorm() / (2.0 * lik.variance);
}

/// Rescales g to the given norm when it exceeds it; direction preserved.
inline Eigen::VectorXd clip_to_norm(Eigen::VectorXd g,
                                    const std::optional<double>& clip_norm) {
  if (clip_norm) {
    const double norm = g.norm();
    if (norm > *clip_norm) g *= *clip_norm / norm;
  }
  return g;
}

inline Eigen::VectorXd grad_log_likelihood(const GaussianLikelihood& lik,
                                           const Eigen::VectorXd& x,
                                           const LikelihoodGuards& guards) {
  if (x.size() != lik.y.size()) {
    throw std::invalid_argument("grad_log_likelihood: dimension mismatch");
  }
  return clip_to_norm((lik.y - x) / lik.variance, guards.clip_norm);
}

}  // namespace tflow
