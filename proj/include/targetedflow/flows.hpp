#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

#include "targetedflow/gmm.hpp"
#include "targetedflow/likelihood.hpp"
#include "targetedflow/rng.hpp"

namespace tflow {

enum class ScheduleFamily { Constant, COverT };

/// Scalar schedule t -> value, either a constant or c/t.
struct ScheduleFn {
  ScheduleFamily family = ScheduleFamily::Constant;
  double scale = 0.0;

  double operator()(double t) const {
    switch (family) {
      case ScheduleFamily::Constant:
        return scale;
      case ScheduleFamily::COverT:
        if (scale == 0.0) return 0.0;
        if (!(t > 0.0)) {
          throw std::domain_error("c_over_t schedule evaluated at t <= 0");
        }
        return scale / t;
    }
    return 0.0;
  }
};

struct Schedule {
  ScheduleFn alpha;  // stochasticity scale in the SDE
  ScheduleFn beta;   // guidance scale in the conditional velocity
};

/// Uniform grid 0 = t_0 < ... < t_N = 1 with spacing 1/N.
class TimeGrid {
 public:
  explicit TimeGrid(int n_steps) : n_steps_(n_steps) {
    if (n_steps_ < 1) throw std::invalid_argument("grid needs n_steps >= 1");
  }

  int steps() const { return n_steps_; }
  double dt() const { return 1.0 / n_steps_; }
  double time(int i) const { return static_cast<double>(i) / n_steps_; }

  int index_of(double t) const {
    const long long i = std::llround(t * n_steps_);
    if (i < 0 || i > n_steps_ || std::abs(t - time(static_cast<int>(i))) > 1e-9) {
      throw std::invalid_argument("time " + std::to_string(t) +
                                  " does not lie on the grid");
    }
    return static_cast<int>(i);
  }

 private:
  int n_steps_;
};

/// Evaluable vector field v(x, t) with divergence and state-Jacobian
/// access. The analytic-mixture field implements everything; derived
/// fields may leave the higher derivatives unavailable.
class VelocityField {
 public:
  virtual ~VelocityField() = default;
  virtual int dim() const = 0;
  virtual Eigen::VectorXd value(const Eigen::VectorXd& x, double t) const = 0;
  virtual double divergence(const Eigen::VectorXd& x, double t) const = 0;
  virtual Eigen::MatrixXd jacobian(const Eigen::VectorXd&, double) const {
    throw std::logic_error("jacobian unavailable for this field");
  }
  virtual Eigen::VectorXd component_laplacians(const Eigen::VectorXd&,
                                               double) const {
    throw std::logic_error("component laplacians unavailable for this field");
  }
};

/// Closed-form optimal velocity of the interpolation path for a
/// Gaussian-mixture data distribution.
class AnalyticMixtureField final : public VelocityField {
 public:
  explicit AnalyticMixtureField(GaussianMixture data) : data_(std::move(data)) {}

  int dim() const override { return data_.dim(); }
  const GaussianMixture& data() const { return data_; }

  Eigen::VectorXd value(const Eigen::VectorXd& x, double t) const override {
    return analytic_velocity(data_, x, t);
  }
  double divergence(const Eigen::VectorXd& x, double t) const override {
    return velocity_divergence(data_, x, t);
  }
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& x, double t) const override {
    return velocity_jacobian(data_, x, t);
  }
  Eigen::VectorXd component_laplacians(const Eigen::VectorXd& x,
                                       double t) const override {
    return velocity_component_laplacians(data_, x, t);
  }

 private:
  GaussianMixture data_;
};

/// Single Euler extrapolation of x at time t to the terminal time.
inline Eigen::VectorXd one_step_projection(const VelocityField& v,
                                           const Eigen::VectorXd& x, double t) {
  return x + (1.0 - t) * v.value(x, t);
}

enum class GradientMode { Exact, Accelerated };

/// Gradient of x -> log p(y | xhat1(x)), norm-clipped per the guards.
/// Exact mode carries the chain rule through the field Jacobian;
/// accelerated mode evaluates the likelihood gradient at xhat1 alone.
inline Eigen::VectorXd guidance_gradient(const VelocityField& v,
                                         const GaussianLikelihood& lik,
                                         const LikelihoodGuards& guards,
                                         const Eigen::VectorXd& x, double t,
                                         GradientMode mode) {
  const Eigen::VectorXd xhat = one_step_projection(v, x, t);
  const Eigen::VectorXd inner = (lik.y - xhat) / lik.variance;
  if (mode == GradientMode::Accelerated) {
    return clip_to_norm(inner, guards.clip_norm);
  }
  const Eigen::VectorXd g = inner + (1.0 - t) * (v.jacobian(x, t).transpose() * inner);
  return clip_to_norm(g, guards.clip_norm);
}

/// v(x,t) + ((1-t)/t) * beta(t) * grad log p(y | xhat1(x)). Defined on
/// (0, 1] only; the SDE interval keeps t >= t_n1 > 0.
inline Eigen::VectorXd conditional_velocity(const VelocityField& v,
                                            const GaussianLikelihood& lik,
                                            const LikelihoodGuards& guards,
                                            const Schedule& sched,
                                            const Eigen::VectorXd& x, double t,
                                            GradientMode mode) {
  if (!(t > 0.0 && t <= 1.0)) {
    throw std::domain_error("conditional_velocity: t must lie in (0, 1]");
  }
  const double coeff = (1.0 - t) / t * sched.beta(t);
  if (coeff == 0.0) return v.value(x, t);
  return v.value(x, t) + coeff * guidance_gradient(v, lik, guards, x, t, mode);
}

/// Conditional guided variant of a base field. Its divergence is the
/// closed form for the unclipped guidance gradient, so it refuses to
/// run with clipping enabled.
class GuidedField final : public VelocityField {
 public:
  GuidedField(const VelocityField& base, GaussianLikelihood lik,
              LikelihoodGuards guards, Schedule sched, GradientMode mode)
      : base_(base),
        lik_(std::move(lik)),
        guards_(guards),
        sched_(sched),
        mode_(mode) {}

  int dim() const override { return base_.dim(); }

  Eigen::VectorXd value(const Eigen::VectorXd& x, double t) const override {
    return conditional_velocity(base_, lik_, guards_, sched_, x, t, mode_);
  }

  double divergence(const Eigen::VectorXd& x, double t) const override {
    if (guards_.clip_norm) {
      throw std::logic_error(
          "guided-field divergence requires an unclipped gradient");
    }
    const double coeff = (1.0 - t) / t * sched_.beta(t);
    const double base_div = base_.divergence(x, t);
    if (coeff == 0.0) return base_div;
    const int d = base_.dim();
    const Eigen::MatrixXd jac = base_.jacobian(x, t);
    const Eigen::MatrixXd a =
        Eigen::MatrixXd::Identity(d, d) + (1.0 - t) * jac;
    double div_g;
    if (mode_ == GradientMode::Accelerated) {
      div_g = -a.trace() / lik_.variance;
    } else {
      const Eigen::VectorXd xhat = x + (1.0 - t) * base_.value(x, t);
      const Eigen::VectorXd lap = base_.component_laplacians(x, t);
      div_g = ((1.0 - t) * (lik_.y - xhat).dot(lap) - a.squaredNorm()) /
              lik_.variance;
    }
    return base_div + coeff * div_g;
  }

 private:
  const VelocityField& base_;
  GaussianLikelihood lik_;
  LikelihoodGuards guards_;
  Schedule sched_;
  GradientMode mode_;
};

inline Eigen::VectorXd sde_drift(const VelocityField& v, const ScheduleFn& alpha,
                                 const Eigen::VectorXd& x, double t) {
  const Eigen::VectorXd vel = v.value(x, t);
  const double a = alpha(t);
  if (a == 0.0) return vel;
  return a * (-x + t * vel) + vel;
}

inline double sde_diffusion(const ScheduleFn& alpha, double t) {
  return std::sqrt(2.0 * (1.0 - t) * alpha(t));
}

/// One-step Euler-Maruyama transition parameters (isotropic Gaussian).
struct KernelParams {
  Eigen::VectorXd mean;
  double variance = 0.0;
};

/// Unconditional transition kernel h at (x_prev, t_prev) over dt.
inline KernelParams kernel_params_h(const VelocityField& v,
                                    const ScheduleFn& alpha,
                                    const Eigen::VectorXd& x_prev, double t_prev,
                                    double dt) {
  KernelParams p;
  p.mean = x_prev + sde_drift(v, alpha, x_prev, t_prev) * dt;
  p.variance = 2.0 * (1.0 - t_prev) * alpha(t_prev) * dt;
  return p;
}

/// Proposal kernel q: drift uses the conditional velocity, variance
/// gains the epsilon1 floor.
inline KernelParams kernel_params_q(const VelocityField& v,
                                    const GaussianLikelihood& lik,
                                    const LikelihoodGuards& guards,
                                    const Schedule& sched,
                                    const Eigen::VectorXd& x_prev, double t_prev,
                                    double dt, double epsilon1,
                                    GradientMode mode) {
  const Eigen::VectorXd vc =
      conditional_velocity(v, lik, guards, sched, x_prev, t_prev, mode);
  const double a = sched.alpha(t_prev);
  KernelParams p;
  p.mean = x_prev + (a * (-x_prev + t_prev * vc) + vc) * dt;
  p.variance = 2.0 * (1.0 - t_prev) * a * dt + epsilon1;
  return p;
}

inline Eigen::VectorXd em_step(const KernelParams& params,
                               const Eigen::VectorXd& noise) {
  if (noise.size() != params.mean.size()) {
    throw std::invalid_argument("em_step: noise dimension mismatch");
  }
  if (params.variance < 0.0) {
    throw std::logic_error("em_step: negative kernel variance");
  }
  if (params.variance == 0.0) return params.mean;
  return params.mean + std::sqrt(params.variance) * noise;
}

inline double kernel_log_density(const KernelParams& params,
                                 const Eigen::VectorXd& x) {
  if (!(params.variance > 0.0)) {
    throw std::domain_error("kernel density needs positive variance");
  }
  return detail::log_gaussian_iso(x, params.mean, params.variance);
}

struct OdeResult {
  Eigen::VectorXd state;
  double log_density_change = 0.0;  // accumulated -div v dt when tracked
};

/// Forward Euler over grid-aligned [t_start, t_end]. With density
/// tracking, -div v is accumulated by the same left-endpoint rule;
/// the divergence is undefined at t = 0, so a step starting there
/// samples it at the right endpoint instead.
inline OdeResult ode_solve(const VelocityField& v, Eigen::VectorXd x0,
                           double t_start, double t_end, const TimeGrid& grid,
                           bool track_density = false) {
  const int i0 = grid.index_of(t_start);
  const int i1 = grid.index_of(t_end);
  if (i1 < i0) {
    throw std::invalid_argument("ode_solve: t_end must not precede t_start");
  }
  const double dt = grid.dt();
  OdeResult out{std::move(x0), 0.0};
  for (int i = i0; i < i1; ++i) {
    const double t = grid.time(i);
    if (track_density) {
      const double td = (i == 0) ? grid.time(1) : t;
      out.log_density_change -= v.divergence(out.state, td) * dt;
    }
    out.state += v.value(out.state, t) * dt;
  }
  return out;
}

/// Euler-Maruyama over grid-aligned [t_start, t_end] with per-step
/// noise pulled from the factory keyed by step index.
inline Eigen::VectorXd sde_solve(const VelocityField& v, const ScheduleFn& alpha,
                                 Eigen::VectorXd x0, double t_start, double t_end,
                                 const TimeGrid& grid,
                                 const StreamFactory& noise) {
  const int i0 = grid.index_of(t_start);
  const int i1 = grid.index_of(t_end);
  if (i1 < i0) {
    throw std::invalid_argument("sde_solve: t_end must not precede t_start");
  }
  Eigen::VectorXd x = std::move(x0);
  for (int i = i0; i < i1; ++i) {
    const KernelParams p = kernel_params_h(v, alpha, x, grid.time(i), grid.dt());
    if (p.variance > 0.0) {
      RngStream rng = noise.at_step(static_cast<std::uint32_t>(i + 1));
      x = em_step(p, rng.normal_vector(v.dim()));
    } else {
      x = p.mean;
    }
  }
  return x;
}

}  // namespace tflow
