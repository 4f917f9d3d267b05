#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "targetedflow/flows.hpp"
#include "targetedflow/likelihood.hpp"
#include "targetedflow/smc.hpp"
#include "targetedflow/threading.hpp"

namespace tflow {

/// All sampler knobs for one run of the ODE-SDE-ODE pipeline.
struct TftfConfig {
  int particle_count = 2000;
  TimeGrid grid{1000};
  double resample_begin = 0.4;  // t_n1
  double resample_end = 0.8;    // t_n2
  double diversify = 0.0;       // delta: SDE stretch after t_n2, no reweighting
  Schedule sched{{ScheduleFamily::COverT, 1.0}, {ScheduleFamily::Constant, 1.0}};
  LikelihoodGuards guards;
  double epsilon1 = 1e-6;
  ResampleScheme scheme = ResampleScheme::Systematic;
  GradientMode mode = GradientMode::Exact;
  std::uint64_t seed = 0;

  void validate() const {
    if (particle_count < 1) {
      throw std::invalid_argument("sampler.particles: must be >= 1");
    }
    validate_guards();
    const int n1 = grid.index_of(resample_begin);
    const int n2 = grid.index_of(resample_end);
    const int nd = grid.index_of(resample_end + diversify);
    if (!(0 < n1 && n1 < n2 && n2 < grid.steps())) {
      throw std::invalid_argument(
          "sampler.t_lower/t_upper: need 0 < t_n1 < t_n2 < 1 on grid nodes");
    }
    if (nd < n2 || nd > grid.steps()) {
      throw std::invalid_argument("sampler.delta: t_n2 + delta must lie in [t_n2, 1]");
    }
    for (int i = n1; i < n2; ++i) {
      if (!(sched.alpha(grid.time(i)) > 0.0)) {
        throw std::invalid_argument(
            "sampler.alpha: must be positive on the resampling interval");
      }
    }
    if (epsilon1 < 0.0) {
      throw std::invalid_argument("sampler.epsilon1: must be >= 0");
    }
  }

  void validate_guards() const { tflow::validate(guards); }
};

struct PhaseTimings {
  double init_ode_s = 0.0;
  double smc_s = 0.0;
  double diversify_s = 0.0;
  double final_ode_s = 0.0;
  double total_s = 0.0;
};

struct TftfOutput {
  std::vector<Eigen::VectorXd> samples;
  Eigen::VectorXd log_weights;  // final, unnormalized
  Eigen::VectorXd norm_weights;
  std::vector<double> ess_trace;  // first weighting, each SMC step, final
  std::vector<std::vector<int>> ancestry;
  PhaseTimings timing;
};

enum class StepKind { First, Subsequent };

/// Incremental SMC log weight. First step scores the look-ahead alone;
/// subsequent steps add the transition/proposal ratio and divide out
/// the previous look-ahead. The epsilon2 floor keeps every term finite.
inline double intermediate_log_weight(StepKind kind, double lookahead_prev,
                                      double lookahead_curr, double log_h,
                                      double log_q,
                                      const LikelihoodGuards& guards) {
  const double curr = std::log(lookahead_curr + guards.epsilon2);
  if (kind == StepKind::First) return curr;
  return curr + log_h - log_q - std::log(lookahead_prev + guards.epsilon2);
}

/// Terminal correction log p(y|x_1) - log(p(y|xhat1(x_{t_n2})) + eps2);
/// no floor on the terminal likelihood, which enters in log space.
inline double final_log_weight(double log_lik_terminal, double lookahead_at_tn2,
                               const LikelihoodGuards& guards) {
  return log_lik_terminal - std::log(lookahead_at_tn2 + guards.epsilon2);
}

namespace detail {

/// parallel_for wrapper that transports the first worker exception back
/// to the caller.
inline void parallel_checked(ThreadPool* pool, std::size_t n,
                             const std::function<void(std::size_t)>& body) {
  std::exception_ptr err = nullptr;
  std::mutex err_mutex;
  for_each_index(pool, n, [&](std::size_t i) {
    try {
      body(i);
    } catch (...) {
      std::lock_guard<std::mutex> lock(err_mutex);
      if (!err) err = std::current_exception();
    }
  });
  if (err) std::rethrow_exception(err);
}

class StopWatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

}  // namespace detail

/// One particle population moving through the pipeline. Exposed
/// step-by-step so the nested sampler can interleave node-level
/// bookkeeping between inner steps; run_tftf drives it end to end.
///
/// Stream addressing: particle k draws from (seed, node, k, step);
/// the resampler owns (seed, node, kResample, step). Results therefore
/// depend only on the configuration, never on worker count.
class SmcSampler {
 public:
  SmcSampler(const VelocityField& v, const GaussianLikelihood& lik,
             const TftfConfig& cfg, std::uint32_t node_id)
      : v_(v), lik_(lik), cfg_(cfg), node_(node_id) {
    cfg_.validate();
    tflow::validate(lik_);
    if (lik_.dim() != v_.dim()) {
      throw std::invalid_argument("likelihood/field dimension mismatch");
    }
    n1_ = cfg_.grid.index_of(cfg_.resample_begin);
    n2_ = cfg_.grid.index_of(cfg_.resample_end);
    nd_ = cfg_.grid.index_of(cfg_.resample_end + cfg_.diversify);
    const int k = cfg_.particle_count;
    particles_ = ParticleSet::with_size(k, v_.dim());
    lookahead_ = Eigen::VectorXd::Zero(k);
  }

  int begin_index() const { return n1_; }
  int end_index() const { return n2_; }
  std::uint32_t node_id() const { return node_; }

  /// N(0, I) init, deterministic ODE to t_n1, first-step weighting.
  void initialize(ThreadPool* pool) {
    const int d = v_.dim();
    const double t1 = cfg_.grid.time(n1_);
    detail::parallel_checked(pool, static_cast<std::size_t>(cfg_.particle_count),
                             [&](std::size_t k) {
      RngStream rng(cfg_.seed, node_, particles_.stream_keys[k], 0);
      Eigen::VectorXd x = rng.normal_vector(d);
      x = ode_solve(v_, std::move(x), 0.0, t1, cfg_.grid).state;
      const Eigen::VectorXd xhat = one_step_projection(v_, x, t1);
      const double la = std::exp(log_likelihood(lik_, xhat));
      particles_.states[k] = std::move(x);
      lookahead_[static_cast<Eigen::Index>(k)] = la;
      particles_.log_weights[static_cast<Eigen::Index>(k)] =
          intermediate_log_weight(StepKind::First, 0.0, la, 0.0, 0.0, cfg_.guards);
    });
    normalize_at("first weighting (t_n1)");
  }

  /// One SMC iteration landing on grid index n: resample by the current
  /// normalized weights, propagate through the guided proposal kernel,
  /// reweight, normalize.
  void step(int n, ThreadPool* pool) {
    const double t_prev = cfg_.grid.time(n - 1);
    const double t_curr = cfg_.grid.time(n);
    const double dt = cfg_.grid.dt();
    RngStream res_rng(cfg_.seed, node_, stream_slot::kResample,
                      static_cast<std::uint32_t>(n));
    std::vector<int> anc = resample_indices(norm_weights_, cfg_.scheme, res_rng);

    std::vector<Eigen::VectorXd> parent_states(anc.size());
    Eigen::VectorXd parent_lookahead(static_cast<Eigen::Index>(anc.size()));
    for (std::size_t k = 0; k < anc.size(); ++k) {
      parent_states[k] = particles_.states[static_cast<std::size_t>(anc[k])];
      parent_lookahead[static_cast<Eigen::Index>(k)] = lookahead_[anc[k]];
    }
    ancestry_.push_back(std::move(anc));

    const int d = v_.dim();
    detail::parallel_checked(pool, parent_states.size(), [&](std::size_t k) {
      const Eigen::VectorXd& x_prev = parent_states[k];
      const KernelParams q = kernel_params_q(v_, lik_, cfg_.guards, cfg_.sched,
                                             x_prev, t_prev, dt, cfg_.epsilon1,
                                             cfg_.mode);
      RngStream rng(cfg_.seed, node_, particles_.stream_keys[k],
                    static_cast<std::uint32_t>(n));
      Eigen::VectorXd x_new = em_step(q, rng.normal_vector(d));
      const KernelParams h = kernel_params_h(v_, cfg_.sched.alpha, x_prev, t_prev, dt);
      const double log_h = kernel_log_density(h, x_new);
      const double log_q = kernel_log_density(q, x_new);
      const Eigen::VectorXd xhat = one_step_projection(v_, x_new, t_curr);
      const double la = std::exp(log_likelihood(lik_, xhat));
      particles_.log_weights[static_cast<Eigen::Index>(k)] =
          intermediate_log_weight(StepKind::Subsequent,
                                  parent_lookahead[static_cast<Eigen::Index>(k)],
                                  la, log_h, log_q, cfg_.guards);
      particles_.states[k] = std::move(x_new);
      lookahead_[static_cast<Eigen::Index>(k)] = la;
    });
    normalize_at("SMC step " + std::to_string(n));
  }

  /// Optional SDE diversification over [t_n2, t_n2 + delta] (no
  /// reweighting; the marginals agree), deterministic ODE to t = 1,
  /// terminal reweighting.
  TftfOutput finalize(ThreadPool* pool) {
    const int k_count = cfg_.particle_count;
    TftfOutput out;
    out.samples.assign(static_cast<std::size_t>(k_count),
                       Eigen::VectorXd::Zero(v_.dim()));
    out.log_weights = Eigen::VectorXd::Zero(k_count);
    const double t_n2 = cfg_.grid.time(n2_);
    const double t_div = cfg_.grid.time(nd_);

    detail::StopWatch watch;
    if (nd_ > n2_) {
      detail::parallel_checked(pool, static_cast<std::size_t>(k_count),
                               [&](std::size_t k) {
        StreamFactory noise{cfg_.seed, node_, particles_.stream_keys[k]};
        particles_.states[k] = sde_solve(v_, cfg_.sched.alpha,
                                         std::move(particles_.states[k]), t_n2,
                                         t_div, cfg_.grid, noise);
      });
    }
    diversify_s_ = watch.lap();

    detail::parallel_checked(pool, static_cast<std::size_t>(k_count),
                             [&](std::size_t k) {
      Eigen::VectorXd x1 =
          ode_solve(v_, std::move(particles_.states[k]), t_div, 1.0, cfg_.grid)
              .state;
      const double incr = final_log_weight(log_likelihood(lik_, x1),
                                           lookahead_[static_cast<Eigen::Index>(k)],
                                           cfg_.guards);
      out.log_weights[static_cast<Eigen::Index>(k)] =
          std::log(norm_weights_[static_cast<Eigen::Index>(k)]) + incr;
      out.samples[k] = std::move(x1);
    });
    final_ode_s_ = watch.lap();

    try {
      out.norm_weights = normalized_weights(out.log_weights);
    } catch (const DegenerateWeightsError& e) {
      throw DegenerateWeightsError(std::string("final reweighting: ") + e.what());
    }
    ess_trace_.push_back(effective_sample_size(out.norm_weights));
    out.ess_trace = ess_trace_;
    out.ancestry = ancestry_;
    out.timing.diversify_s = diversify_s_;
    out.timing.final_ode_s = final_ode_s_;
    return out;
  }

  /// Unnormalized incremental log weights of the latest step (node
  /// weights accumulate their mean).
  const Eigen::VectorXd& incremental_log_weights() const {
    return particles_.log_weights;
  }

  double log_mean_weight() const {
    return log_sum_exp(particles_.log_weights) -
           std::log(static_cast<double>(cfg_.particle_count));
  }

  const std::vector<double>& ess_trace() const { return ess_trace_; }
  const ParticleSet& particles() const { return particles_; }

  /// Value snapshot of the evolving state, for node-level resampling.
  struct Snapshot {
    std::vector<Eigen::VectorXd> states;
    Eigen::VectorXd log_weights;
    Eigen::VectorXd norm_weights;
    Eigen::VectorXd lookahead;
  };

  Snapshot snapshot() const {
    return Snapshot{particles_.states, particles_.log_weights, norm_weights_,
                    lookahead_};
  }

  void restore(const Snapshot& snap) {
    particles_.states = snap.states;
    particles_.log_weights = snap.log_weights;
    norm_weights_ = snap.norm_weights;
    lookahead_ = snap.lookahead;
  }

 private:
  void normalize_at(const std::string& where) {
    try {
      norm_weights_ = normalized_weights(particles_.log_weights);
    } catch (const DegenerateWeightsError& e) {
      throw DegenerateWeightsError(where + ": " + e.what());
    }
    ess_trace_.push_back(effective_sample_size(norm_weights_));
  }

  const VelocityField& v_;
  GaussianLikelihood lik_;
  TftfConfig cfg_;
  std::uint32_t node_;
  int n1_ = 0, n2_ = 0, nd_ = 0;
  ParticleSet particles_;
  Eigen::VectorXd norm_weights_;
  Eigen::VectorXd lookahead_;  // cached p(y | xhat1(x)) per particle
  std::vector<double> ess_trace_;
  std::vector<std::vector<int>> ancestry_;
  double diversify_s_ = 0.0, final_ode_s_ = 0.0;
};

/// Algorithm: ODE to t_n1, weighted SMC over [t_n1, t_n2], optional SDE
/// diversification, ODE to 1, terminal reweighting. Deterministic given
/// the seed, for any worker count.
inline TftfOutput run_tftf(const VelocityField& v, const GaussianLikelihood& lik,
                           const TftfConfig& cfg, ThreadPool* pool = nullptr) {
  SmcSampler sampler(v, lik, cfg, /*node_id=*/0);
  detail::StopWatch watch;
  sampler.initialize(pool);
  const double init_s = watch.lap();
  for (int n = sampler.begin_index() + 1; n <= sampler.end_index(); ++n) {
    sampler.step(n, pool);
  }
  const double smc_s = watch.lap();
  TftfOutput out = sampler.finalize(pool);
  out.timing.init_ode_s = init_s;
  out.timing.smc_s = smc_s;
  out.timing.total_s = init_s + smc_s + out.timing.diversify_s + out.timing.final_ode_s;
  return out;
}

inline double weighted_expectation(
    const TftfOutput& out,
    const std::function<double(const Eigen::VectorXd&)>& phi) {
  double acc = 0.0;
  for (std::size_t k = 0; k < out.samples.size(); ++k) {
    acc += out.norm_weights[static_cast<Eigen::Index>(k)] * phi(out.samples[k]);
  }
  return acc;
}

}  // namespace tflow
