#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "targetedflow/rng.hpp"

namespace tflow {

struct DegenerateWeightsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Max-shifted log-sum-exp; -inf entries contribute nothing.
inline double log_sum_exp(const Eigen::VectorXd& log_values) {
  double max_log = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < log_values.size(); ++i) {
    if (std::isnan(log_values[i])) {
      throw DegenerateWeightsError("log weight is NaN");
    }
    max_log = std::max(max_log, log_values[i]);
  }
  if (!std::isfinite(max_log)) {
    throw DegenerateWeightsError("all log weights are -inf");
  }
  double sum = 0.0;
  for (Eigen::Index i = 0; i < log_values.size(); ++i) {
    sum += std::exp(log_values[i] - max_log);
  }
  return max_log + std::log(sum);
}

/// w_k = exp(lw_k - logsumexp(lw)); sums to 1.
inline Eigen::VectorXd normalized_weights(const Eigen::VectorXd& log_weights) {
  if (log_weights.size() == 0) {
    throw std::invalid_argument("normalize: empty weight vector");
  }
  const double lse = log_sum_exp(log_weights);
  Eigen::VectorXd w(log_weights.size());
  for (Eigen::Index i = 0; i < log_weights.size(); ++i) {
    w[i] = std::exp(log_weights[i] - lse);
  }
  return w;
}

/// 1 / sum w_k^2 for normalized weights; lies in [1, K].
inline double effective_sample_size(const Eigen::VectorXd& normalized) {
  return 1.0 / normalized.squaredNorm();
}

enum class ResampleScheme { Systematic, Multinomial };

inline ResampleScheme resample_scheme_from_string(const std::string& s) {
  if (s == "systematic") return ResampleScheme::Systematic;
  if (s == "multinomial") return ResampleScheme::Multinomial;
  throw std::invalid_argument("unknown resample scheme: " + s);
}

/// Ancestor indices for K offspring. Systematic uses one uniform offset
/// against stratified positions, multinomial draws i.i.d. from w.
inline std::vector<int> resample_indices(const Eigen::VectorXd& weights,
                                         ResampleScheme scheme, RngStream& rng) {
  const Eigen::Index k = weights.size();
  if (k == 0) throw std::invalid_argument("resample: empty weight vector");
  for (Eigen::Index i = 0; i < k; ++i) {
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) {
      throw DegenerateWeightsError("resample: invalid weight");
    }
  }
  std::vector<int> idx(static_cast<std::size_t>(k));
  if (scheme == ResampleScheme::Systematic) {
    const double u = rng.uniform01();
    Eigen::Index j = 0;
    double cum = weights[0];
    for (Eigen::Index i = 0; i < k; ++i) {
      const double pos = (static_cast<double>(i) + u) / static_cast<double>(k);
      while (pos > cum && j + 1 < k) {
        ++j;
        cum += weights[j];
      }
      idx[static_cast<std::size_t>(i)] = static_cast<int>(j);
    }
  } else {
    std::vector<double> cdf(static_cast<std::size_t>(k));
    double cum = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) {
      cum += weights[i];
      cdf[static_cast<std::size_t>(i)] = cum;
    }
    cdf.back() = std::max(cdf.back(), 1.0);
    for (Eigen::Index i = 0; i < k; ++i) {
      const double u = rng.uniform01();
      const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
      idx[static_cast<std::size_t>(i)] =
          static_cast<int>(it - cdf.begin());
    }
  }
  return idx;
}

/// K states with unnormalized log weights and per-particle stream keys.
struct ParticleSet {
  std::vector<Eigen::VectorXd> states;
  Eigen::VectorXd log_weights;
  std::vector<std::uint32_t> stream_keys;

  static ParticleSet with_size(int k, int dim) {
    ParticleSet ps;
    ps.states.assign(static_cast<std::size_t>(k), Eigen::VectorXd::Zero(dim));
    ps.log_weights = Eigen::VectorXd::Zero(k);
    ps.stream_keys.resize(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
      ps.stream_keys[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(i);
    }
    return ps;
  }
};

}  // namespace tflow
