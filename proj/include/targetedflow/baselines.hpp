#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "targetedflow/flows.hpp"
#include "targetedflow/gmm.hpp"
#include "targetedflow/smc.hpp"
#include "targetedflow/tftf.hpp"
#include "targetedflow/threading.hpp"

namespace tflow {

struct IsOutput {
  std::vector<Eigen::VectorXd> samples;
  Eigen::VectorXd log_weights;
  Eigen::VectorXd norm_weights;
  double ess = 0.0;
  Eigen::VectorXd tracked_log_p1;
};

/// Direct importance sampling: integrate the guided ODE from N(0, I)
/// to t = 1 while tracking the path log-density, then weight by
/// p_data(x1) p(y|x1) / p1(x1).
///
/// Gradient clipping is disabled here: the tracked divergence is the
/// closed form for the unclipped guidance field, and the weights are
/// only valid when the divergence matches the field actually integrated.
/// The guidance term is skipped at the t = 0 node, where the look-ahead
/// carries no information and the (1-t)/t coefficient is undefined.
inline IsOutput run_direct_is(const AnalyticMixtureField& field,
                              const GaussianLikelihood& lik,
                              const Schedule& sched, int k_count,
                              const TimeGrid& grid, GradientMode mode,
                              std::uint64_t seed, ThreadPool* pool = nullptr) {
  validate(lik);
  if (k_count < 1) throw std::invalid_argument("direct IS needs K >= 1");
  LikelihoodGuards no_clip;
  const GuidedField guided(field, lik, no_clip, sched, mode);
  const GaussianMixture& data = field.data();
  const int d = field.dim();
  const int n = grid.steps();
  const double dt = grid.dt();

  IsOutput out;
  out.samples.assign(static_cast<std::size_t>(k_count), Eigen::VectorXd::Zero(d));
  out.log_weights = Eigen::VectorXd::Zero(k_count);
  out.tracked_log_p1 = Eigen::VectorXd::Zero(k_count);

  detail::parallel_checked(pool, static_cast<std::size_t>(k_count),
                           [&](std::size_t k) {
    RngStream rng(seed, stream_node::kDirectIs, static_cast<std::uint32_t>(k), 0);
    Eigen::VectorXd x = rng.normal_vector(d);
    double log_p = -0.5 * d * std::log(2.0 * M_PI) - 0.5 * x.squaredNorm();
    for (int i = 0; i < n; ++i) {
      const double t = grid.time(i);
      const VelocityField& f =
          (i == 0) ? static_cast<const VelocityField&>(field)
                   : static_cast<const VelocityField&>(guided);
      const double td = (i == 0) ? grid.time(1) : t;
      log_p -= f.divergence(x, td) * dt;
      x += f.value(x, t) * dt;
    }
    out.tracked_log_p1[static_cast<Eigen::Index>(k)] = log_p;
    out.log_weights[static_cast<Eigen::Index>(k)] =
        mixture_log_density(data, x) + log_likelihood(lik, x) - log_p;
    out.samples[k] = std::move(x);
  });
  out.norm_weights = normalized_weights(out.log_weights);
  out.ess = effective_sample_size(out.norm_weights);
  return out;
}

/// Guided-ODE baseline: the conditional field integrated to t = 1 with
/// no correction; equally weighted, biased output.
inline std::vector<Eigen::VectorXd> run_guided_ode(
    const VelocityField& field, const GaussianLikelihood& lik,
    const LikelihoodGuards& guards, const Schedule& sched, int k_count,
    const TimeGrid& grid, GradientMode mode, std::uint64_t seed,
    ThreadPool* pool = nullptr) {
  validate(lik);
  if (k_count < 1) throw std::invalid_argument("guided ODE needs K >= 1");
  const GuidedField guided(field, lik, guards, sched, mode);
  const int d = field.dim();
  const int n = grid.steps();
  const double dt = grid.dt();
  std::vector<Eigen::VectorXd> samples(static_cast<std::size_t>(k_count));
  detail::parallel_checked(pool, static_cast<std::size_t>(k_count),
                           [&](std::size_t k) {
    RngStream rng(seed, stream_node::kGuidedOde, static_cast<std::uint32_t>(k), 0);
    Eigen::VectorXd x = rng.normal_vector(d);
    for (int i = 0; i < n; ++i) {
      const double t = grid.time(i);
      const VelocityField& f =
          (i == 0) ? field : static_cast<const VelocityField&>(guided);
      x += f.value(x, t) * dt;
    }
    samples[k] = std::move(x);
  });
  return samples;
}

/// Unconditional ODE pushforward from N(0, I); samples p_data up to
/// integration error.
inline std::vector<Eigen::VectorXd> run_unconditional(const VelocityField& field,
                                                      int k_count,
                                                      const TimeGrid& grid,
                                                      std::uint64_t seed,
                                                      ThreadPool* pool = nullptr) {
  if (k_count < 1) throw std::invalid_argument("unconditional needs K >= 1");
  const int d = field.dim();
  std::vector<Eigen::VectorXd> samples(static_cast<std::size_t>(k_count));
  detail::parallel_checked(pool, static_cast<std::size_t>(k_count),
                           [&](std::size_t k) {
    RngStream rng(seed, stream_node::kUnconditional,
                  static_cast<std::uint32_t>(k), 0);
    Eigen::VectorXd x = rng.normal_vector(d);
    samples[k] = ode_solve(field, std::move(x), 0.0, 1.0, grid).state;
  });
  return samples;
}

}  // namespace tflow
