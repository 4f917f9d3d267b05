#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "targetedflow/smc.hpp"
#include "targetedflow/tftf.hpp"
#include "targetedflow/threading.hpp"

namespace tflow {

/// Island-model configuration: M nodes each running the inner sampler,
/// with node weights lambda and adaptive node-level resampling.
struct NestedConfig {
  enum class OuterMode { Adaptive, Always };

  int nodes = 50;  // M
  std::optional<double> outer_threshold;  // absolute M_tau
  double outer_threshold_fraction = 0.8;  // used when no absolute value given
  OuterMode outer_mode = OuterMode::Adaptive;
  TftfConfig inner;

  double resolved_threshold() const {
    return outer_threshold ? *outer_threshold : outer_threshold_fraction * nodes;
  }

  void validate() const {
    if (nodes < 1) throw std::invalid_argument("sampler.nodes: must be >= 1");
    const double tau = resolved_threshold();
    if (!(tau > 0.0) || tau > nodes) {
      throw std::invalid_argument("sampler.outer_threshold: need 0 < M_tau <= M");
    }
    inner.validate();
  }
};

/// One island: an inner particle population plus its accumulated node
/// log-weight. node_id stays bound to the slot; outer resampling
/// replaces the contents, not the identity.
struct NodeState {
  ParticleSet particles;
  double log_lambda = 0.0;
  std::uint32_t node_id = 0;
};

/// log lambda update: previous value plus the log mean of the inner
/// unnormalized weights.
inline double update_node_weight(double log_lambda_prev,
                                 const Eigen::VectorXd& inner_log_weights) {
  if (inner_log_weights.size() == 0) {
    throw std::invalid_argument("update_node_weight: empty inner weights");
  }
  double lse;
  try {
    lse = log_sum_exp(inner_log_weights);
  } catch (const DegenerateWeightsError& e) {
    throw DegenerateWeightsError(std::string("node weight update: ") + e.what());
  }
  return log_lambda_prev + lse -
         std::log(static_cast<double>(inner_log_weights.size()));
}

struct OuterDecision {
  double node_ess = 0.0;
  bool fired = false;
  std::vector<int> ancestors;  // filled when fired
};

/// Node-level ESS check and (systematic) whole-node resampling decision.
inline OuterDecision outer_resample_decision(const Eigen::VectorXd& log_lambdas,
                                             double m_tau, bool force,
                                             RngStream& rng) {
  OuterDecision d;
  Eigen::VectorXd norm;
  try {
    norm = normalized_weights(log_lambdas);
  } catch (const DegenerateWeightsError& e) {
    throw DegenerateWeightsError(std::string("node weights: ") + e.what());
  }
  d.node_ess = effective_sample_size(norm);
  d.fired = force || d.node_ess < m_tau;
  if (d.fired) {
    d.ancestors = resample_indices(norm, ResampleScheme::Systematic, rng);
  }
  return d;
}

/// Applies the decision to a set of nodes: whole particle sets are
/// copied by value and every log lambda resets to 0. Returns whether
/// resampling fired.
inline bool maybe_outer_resample(std::vector<NodeState>& nodes, double m_tau,
                                 RngStream& rng) {
  Eigen::VectorXd ll(static_cast<Eigen::Index>(nodes.size()));
  for (std::size_t m = 0; m < nodes.size(); ++m) {
    ll[static_cast<Eigen::Index>(m)] = nodes[m].log_lambda;
  }
  const OuterDecision d = outer_resample_decision(ll, m_tau, false, rng);
  if (!d.fired) return false;
  std::vector<ParticleSet> copies(nodes.size());
  for (std::size_t m = 0; m < nodes.size(); ++m) {
    copies[m] = nodes[static_cast<std::size_t>(d.ancestors[m])].particles;
  }
  for (std::size_t m = 0; m < nodes.size(); ++m) {
    nodes[m].particles = std::move(copies[m]);
    nodes[m].log_lambda = 0.0;
  }
  return true;
}

struct NestedOutput {
  std::vector<Eigen::VectorXd> samples;  // M*K, node-major
  Eigen::VectorXd log_weights;           // unnormalized global log weights
  Eigen::VectorXd norm_weights;
  std::vector<double> node_ess_trace;    // one entry per SMC step
  std::vector<int> outer_events;         // grid indices where nodes resampled
  std::vector<Eigen::VectorXd> lambda_history;  // log lambdas after each update
  double total_s = 0.0;
};

/// Nested sampler: per-node inner SMC with node-weight accumulation,
/// node-level resampling when the node ESS dips below M_tau (or at every
/// step in Always mode), then global reweighting over all M*K samples.
/// Nodes advance concurrently between the outer barriers; every stream
/// is keyed by (seed, node_id, particle, step), so scheduling never
/// changes the result.
inline NestedOutput run_nested(const VelocityField& v,
                               const GaussianLikelihood& lik,
                               const NestedConfig& cfg,
                               ThreadPool* pool = nullptr) {
  cfg.validate();
  const int m_count = cfg.nodes;
  const int k_count = cfg.inner.particle_count;
  const double m_tau = cfg.resolved_threshold();

  detail::StopWatch watch;
  std::vector<SmcSampler> nodes;
  nodes.reserve(static_cast<std::size_t>(m_count));
  for (int m = 0; m < m_count; ++m) {
    nodes.emplace_back(v, lik, cfg.inner, static_cast<std::uint32_t>(m));
  }

  NestedOutput out;
  Eigen::VectorXd log_lambda = Eigen::VectorXd::Zero(m_count);

  auto node_failure = [](std::size_t m, const std::exception& e) {
    return DegenerateWeightsError("node " + std::to_string(m) + ": " + e.what());
  };

  detail::parallel_checked(pool, static_cast<std::size_t>(m_count),
                           [&](std::size_t m) {
    try {
      nodes[m].initialize(nullptr);
    } catch (const DegenerateWeightsError& e) {
      throw node_failure(m, e);
    }
  });
  for (int m = 0; m < m_count; ++m) {
    log_lambda[m] = update_node_weight(0.0, nodes[static_cast<std::size_t>(m)]
                                                .incremental_log_weights());
  }
  out.lambda_history.push_back(log_lambda);

  const int n1 = nodes.front().begin_index();
  const int n2 = nodes.front().end_index();
  for (int n = n1 + 1; n <= n2; ++n) {
    RngStream outer_rng(cfg.inner.seed, stream_node::kOuter,
                        stream_slot::kResample, static_cast<std::uint32_t>(n));
    const OuterDecision decision = outer_resample_decision(
        log_lambda, m_tau, cfg.outer_mode == NestedConfig::OuterMode::Always,
        outer_rng);
    out.node_ess_trace.push_back(decision.node_ess);
    if (decision.fired) {
      out.outer_events.push_back(n);
      std::vector<SmcSampler::Snapshot> snaps;
      snaps.reserve(nodes.size());
      for (const auto& node : nodes) snaps.push_back(node.snapshot());
      for (std::size_t m = 0; m < nodes.size(); ++m) {
        nodes[m].restore(snaps[static_cast<std::size_t>(decision.ancestors[m])]);
      }
      log_lambda.setZero();
    }
    detail::parallel_checked(pool, static_cast<std::size_t>(m_count),
                             [&](std::size_t m) {
      try {
        nodes[m].step(n, nullptr);
      } catch (const DegenerateWeightsError& e) {
        throw node_failure(m, e);
      }
    });
    for (int m = 0; m < m_count; ++m) {
      log_lambda[m] += nodes[static_cast<std::size_t>(m)].log_mean_weight();
    }
    out.lambda_history.push_back(log_lambda);
  }

  std::vector<TftfOutput> finals(static_cast<std::size_t>(m_count));
  detail::parallel_checked(pool, static_cast<std::size_t>(m_count),
                           [&](std::size_t m) {
    try {
      finals[m] = nodes[m].finalize(nullptr);
    } catch (const DegenerateWeightsError& e) {
      throw node_failure(m, e);
    }
  });

  // Two-stage normalization: normalized node weights times the per-node
  // normalized final weights. Equivalent to normalizing lambda * w
  // jointly, and reduces exactly to the inner output when M = 1.
  const Eigen::VectorXd lambda_norm = normalized_weights(log_lambda);
  out.samples.reserve(static_cast<std::size_t>(m_count) * k_count);
  out.log_weights = Eigen::VectorXd::Zero(m_count * k_count);
  out.norm_weights = Eigen::VectorXd::Zero(m_count * k_count);
  for (int m = 0; m < m_count; ++m) {
    const auto& f = finals[static_cast<std::size_t>(m)];
    for (int k = 0; k < k_count; ++k) {
      const Eigen::Index idx = static_cast<Eigen::Index>(m) * k_count + k;
      out.log_weights[idx] = log_lambda[m] + f.log_weights[k];
      out.norm_weights[idx] = lambda_norm[m] * f.norm_weights[k];
      out.samples.push_back(f.samples[static_cast<std::size_t>(k)]);
    }
  }
  out.total_s = watch.lap();
  return out;
}

inline double weighted_expectation(
    const NestedOutput& out,
    const std::function<double(const Eigen::VectorXd&)>& phi) {
  double acc = 0.0;
  for (std::size_t k = 0; k < out.samples.size(); ++k) {
    acc += out.norm_weights[static_cast<Eigen::Index>(k)] * phi(out.samples[k]);
  }
  return acc;
}

}  // namespace tflow
