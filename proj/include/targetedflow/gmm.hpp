#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "targetedflow/likelihood.hpp"
#include "targetedflow/rng.hpp"

namespace tflow {

struct GaussianComponent {
  double weight = 1.0;
  Eigen::VectorXd mean;
  double variance = 1.0;  // isotropic covariance variance * I
};

/// Finite mixture of isotropic Gaussians. Serves as the data
/// distribution, as the time-t marginal of the interpolation path, and
/// as the analytic conditional posterior.
class GaussianMixture {
 public:
  GaussianMixture(int dim, std::vector<GaussianComponent> components)
      : dim_(dim), components_(std::move(components)) {
    if (dim_ <= 0) throw std::invalid_argument("mixture dim must be positive");
    if (components_.empty()) {
      throw std::invalid_argument("mixture needs at least one component");
    }
    double total = 0.0;
    for (const auto& c : components_) {
      if (!(c.variance > 0.0)) {
        throw std::invalid_argument("component variance must be positive");
      }
      if (!(c.weight > 0.0) || c.weight > 1.0) {
        throw std::invalid_argument("component weight must lie in (0, 1]");
      }
      if (c.mean.size() != dim_) {
        throw std::invalid_argument("component mean length must equal dim");
      }
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-12) {
      throw std::invalid_argument("component weights must sum to 1");
    }
  }

  int dim() const { return dim_; }
  const std::vector<GaussianComponent>& components() const { return components_; }
  std::size_t size() const { return components_.size(); }

  Eigen::VectorXd mean() const {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(dim_);
    for (const auto& c : components_) m += c.weight * c.mean;
    return m;
  }

  /// Full covariance (isotropic within components, not overall).
  Eigen::MatrixXd covariance() const {
    const Eigen::VectorXd m = mean();
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim_, dim_);
    for (const auto& c : components_) {
      cov += c.weight * c.variance * Eigen::MatrixXd::Identity(dim_, dim_);
      const Eigen::VectorXd d = c.mean - m;
      cov += c.weight * d * d.transpose();
    }
    return cov;
  }

 private:
  int dim_;
  std::vector<GaussianComponent> components_;
};

/// The marginal law of t*X1 + (1-t)*X0 with X1 ~ data, X0 ~ N(0, I).
struct TimeMarginal {
  double t = 0.0;
  GaussianMixture mixture;
};

namespace detail {

inline double log_gaussian_iso(const Eigen::VectorXd& x,
                               const Eigen::VectorXd& mean, double variance) {
  const double d = static_cast<double>(x.size());
  return -0.5 * d * std::log(2.0 * M_PI * variance) -
         (x - mean).squaredNorm() / (2.0 * variance);
}

}  // namespace detail

/// Everything derivable from log f at one point, computed in one pass.
/// Higher entries are filled only when the requested order covers them.
struct MixtureDerivatives {
  double log_density = 0.0;
  Eigen::VectorXd score;           // grad log f
  Eigen::MatrixXd hessian;         // grad^2 log f
  double laplacian = 0.0;          // tr grad^2 log f
  Eigen::VectorXd grad_laplacian;  // grad tr grad^2 log f
};

enum class DerivOrder { Density, Score, Hessian, GradLaplacian };

inline MixtureDerivatives mixture_derivatives(const GaussianMixture& m,
                                              const Eigen::VectorXd& x,
                                              DerivOrder order) {
  if (x.size() != m.dim()) {
    throw std::invalid_argument("mixture evaluation: dimension mismatch");
  }
  const int d = m.dim();
  const std::size_t J = m.size();

  // Max-shifted log-sum-exp over component log terms.
  std::vector<double> logs(J);
  double max_log = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < J; ++j) {
    const auto& c = m.components()[j];
    logs[j] = std::log(c.weight) + detail::log_gaussian_iso(x, c.mean, c.variance);
    max_log = std::max(max_log, logs[j]);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < J; ++j) sum += std::exp(logs[j] - max_log);

  MixtureDerivatives out;
  out.log_density = max_log + std::log(sum);
  if (order == DerivOrder::Density) return out;

  std::vector<double> resp(J);
  for (std::size_t j = 0; j < J; ++j) resp[j] = std::exp(logs[j] - max_log) / sum;

  out.score = Eigen::VectorXd::Zero(d);
  std::vector<Eigen::VectorXd> comp_scores(J);
  for (std::size_t j = 0; j < J; ++j) {
    const auto& c = m.components()[j];
    comp_scores[j] = (c.mean - x) / c.variance;
    out.score += resp[j] * comp_scores[j];
  }
  if (order == DerivOrder::Score) return out;

  out.hessian = Eigen::MatrixXd::Zero(d, d);
  double inv_var_mix = 0.0;
  out.laplacian = 0.0;
  for (std::size_t j = 0; j < J; ++j) {
    const auto& c = m.components()[j];
    out.hessian += resp[j] * comp_scores[j] * comp_scores[j].transpose();
    inv_var_mix += resp[j] / c.variance;
    out.laplacian += resp[j] * (comp_scores[j].squaredNorm() - d / c.variance);
  }
  out.hessian -= out.score * out.score.transpose();
  out.hessian -= inv_var_mix * Eigen::MatrixXd::Identity(d, d);
  out.laplacian -= out.score.squaredNorm();
  if (order == DerivOrder::Hessian) return out;

  out.grad_laplacian = Eigen::VectorXd::Zero(d);
  for (std::size_t j = 0; j < J; ++j) {
    const auto& c = m.components()[j];
    out.grad_laplacian +=
        resp[j] * ((comp_scores[j] - out.score) *
                       (comp_scores[j].squaredNorm() - d / c.variance) -
                   2.0 / c.variance * comp_scores[j]);
  }
  out.grad_laplacian -= 2.0 * out.hessian * out.score;
  return out;
}

inline double mixture_log_density(const GaussianMixture& m,
                                  const Eigen::VectorXd& x) {
  return mixture_derivatives(m, x, DerivOrder::Density).log_density;
}

inline Eigen::VectorXd mixture_score(const GaussianMixture& m,
                                     const Eigen::VectorXd& x) {
  return mixture_derivatives(m, x, DerivOrder::Score).score;
}

/// Exact marginal of the linear interpolation at time t: component j
/// becomes (w_j, t*mu_j, t^2 sigma_j^2 + (1-t)^2).
inline TimeMarginal interpolated_marginal(const GaussianMixture& data, double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw std::invalid_argument("interpolated_marginal: t must lie in [0, 1]");
  }
  std::vector<GaussianComponent> comps;
  comps.reserve(data.size());
  for (const auto& c : data.components()) {
    GaussianComponent out;
    out.weight = c.weight;
    out.mean = t * c.mean;
    out.variance = t * t * c.variance + (1.0 - t) * (1.0 - t);
    comps.push_back(std::move(out));
  }
  return TimeMarginal{t, GaussianMixture(data.dim(), std::move(comps))};
}

/// Exact E[X1 - X0 | X(t) = x] for the interpolation path, via the
/// score identity v = x/t + ((1-t)/t) grad log f(x, t); the t = 0
/// boundary takes the analytic limit E[X1] - x.
inline Eigen::VectorXd analytic_velocity(const GaussianMixture& data,
                                         const Eigen::VectorXd& x, double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw std::invalid_argument("analytic_velocity: t must lie in [0, 1]");
  }
  if (x.size() != data.dim()) {
    throw std::invalid_argument("analytic_velocity: dimension mismatch");
  }
  if (t == 0.0) return data.mean() - x;
  const TimeMarginal marg = interpolated_marginal(data, t);
  const Eigen::VectorXd score = mixture_score(marg.mixture, x);
  return x / t + ((1.0 - t) / t) * score;
}

inline double velocity_divergence(const GaussianMixture& data,
                                  const Eigen::VectorXd& x, double t) {
  if (!(t > 0.0 && t <= 1.0)) {
    throw std::domain_error("velocity_divergence: t must lie in (0, 1]");
  }
  if (x.size() != data.dim()) {
    throw std::invalid_argument("velocity_divergence: dimension mismatch");
  }
  const TimeMarginal marg = interpolated_marginal(data, t);
  const auto derivs = mixture_derivatives(marg.mixture, x, DerivOrder::Hessian);
  return data.dim() / t + ((1.0 - t) / t) * derivs.laplacian;
}

/// State Jacobian of the velocity, I/t + ((1-t)/t) grad^2 log f; symmetric.
/// At t = 0 the limit field E[X1] - x gives exactly -I.
inline Eigen::MatrixXd velocity_jacobian(const GaussianMixture& data,
                                         const Eigen::VectorXd& x, double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw std::invalid_argument("velocity_jacobian: t must lie in [0, 1]");
  }
  const int d = data.dim();
  if (t == 0.0) return -Eigen::MatrixXd::Identity(d, d);
  const TimeMarginal marg = interpolated_marginal(data, t);
  const auto derivs = mixture_derivatives(marg.mixture, x, DerivOrder::Hessian);
  return Eigen::MatrixXd::Identity(d, d) / t + ((1.0 - t) / t) * derivs.hessian;
}

/// Per-coordinate Laplacians of the velocity components,
/// (Delta v_1, ..., Delta v_d) = ((1-t)/t) grad(Delta log f).
inline Eigen::VectorXd velocity_component_laplacians(const GaussianMixture& data,
                                                     const Eigen::VectorXd& x,
                                                     double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw std::invalid_argument("velocity_component_laplacians: t must lie in [0, 1]");
  }
  if (t == 0.0) return Eigen::VectorXd::Zero(data.dim());
  const TimeMarginal marg = interpolated_marginal(data, t);
  const auto derivs =
      mixture_derivatives(marg.mixture, x, DerivOrder::GradLaplacian);
  return ((1.0 - t) / t) * derivs.grad_laplacian;
}

/// Exact conditional p_data(. | y) under the isotropic Gaussian
/// likelihood: per-component conjugate update, component weights
/// rescaled by the marginal evidence and renormalized.
inline GaussianMixture posterior_mixture(const GaussianMixture& data,
                                         const GaussianLikelihood& lik) {
  validate(lik);
  if (lik.y.size() != data.dim()) {
    throw std::invalid_argument("posterior_mixture: dimension mismatch");
  }
  const std::size_t J = data.size();
  std::vector<GaussianComponent> comps(J);
  std::vector<double> log_w(J);
  double max_log = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < J; ++j) {
    const auto& c = data.components()[j];
    const double post_var = 1.0 / (1.0 / c.variance + 1.0 / lik.variance);
    comps[j].variance = post_var;
    comps[j].mean = post_var * (c.mean / c.variance + lik.y / lik.variance);
    const double evidence =
        detail::log_gaussian_iso(lik.y, c.mean, c.variance + lik.variance);
    log_w[j] = std::log(c.weight) + evidence;
    max_log = std::max(max_log, log_w[j]);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < J; ++j) sum += std::exp(log_w[j] - max_log);
  for (std::size_t j = 0; j < J; ++j) {
    comps[j].weight = std::exp(log_w[j] - max_log) / sum;
  }
  return GaussianMixture(data.dim(), std::move(comps));
}

inline Eigen::VectorXd sample_mixture(const GaussianMixture& m, RngStream& rng) {
  const double u = rng.uniform01();
  double acc = 0.0;
  const auto& comps = m.components();
  std::size_t pick = comps.size() - 1;
  for (std::size_t j = 0; j < comps.size(); ++j) {
    acc += comps[j].weight;
    if (u <= acc) {
      pick = j;
      break;
    }
  }
  const auto& c = comps[pick];
  return c.mean + std::sqrt(c.variance) * rng.normal_vector(m.dim());
}

/// The two-mode example distribution used throughout the test experiments:
/// 3/4 N((-sqrt2, -sqrt2), I/4) + 1/4 N((sqrt2, sqrt2), I/4).
inline GaussianMixture toy_data_mixture() {
  const double s = std::sqrt(2.0);
  GaussianComponent a{0.75, Eigen::Vector2d(-s, -s), 0.25};
  GaussianComponent b{0.25, Eigen::Vector2d(s, s), 0.25};
  return GaussianMixture(2, {a, b});
}

/// Product replication of the toy mixture across blocks of two
/// coordinates; 2^blocks components in dimension 2*blocks.
inline GaussianMixture product_toy_mixture(int blocks) {
  if (blocks < 1) throw std::invalid_argument("blocks must be >= 1");
  const double s = std::sqrt(2.0);
  const int d = 2 * blocks;
  std::vector<GaussianComponent> comps;
  const std::size_t n = std::size_t(1) << blocks;
  comps.reserve(n);
  for (std::size_t mask = 0; mask < n; ++mask) {
    GaussianComponent c;
    c.variance = 0.25;
    c.weight = 1.0;
    c.mean = Eigen::VectorXd(d);
    for (int b = 0; b < blocks; ++b) {
      const bool minor = (mask >> b) & 1u;
      c.weight *= minor ? 0.25 : 0.75;
      const double sign = minor ? 1.0 : -1.0;
      c.mean[2 * b] = sign * s;
      c.mean[2 * b + 1] = sign * s;
    }
    comps.push_back(std::move(c));
  }
  return GaussianMixture(d, std::move(comps));
}

}  // namespace tflow
