#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "targetedflow/gmm.hpp"
#include "targetedflow/rng.hpp"
#include "targetedflow/smc.hpp"

namespace tflow {

/// Exact minimum-cost perfect matching on a dense square cost matrix
/// (row-major), via shortest augmenting paths with dual potentials.
/// Returns the column assigned to each row.
inline std::vector<int> solve_assignment(const std::vector<double>& cost, int n) {
  if (n <= 0 || cost.size() != static_cast<std::size_t>(n) * n) {
    throw std::invalid_argument("solve_assignment: bad cost matrix");
  }
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n, 0.0), v(n, 0.0), shortest(n);
  std::vector<int> path(n, -1), col4row(n, -1), row4col(n, -1);
  std::vector<char> sr(n), sc(n);

  for (int cur = 0; cur < n; ++cur) {
    std::fill(sr.begin(), sr.end(), 0);
    std::fill(sc.begin(), sc.end(), 0);
    std::fill(shortest.begin(), shortest.end(), kInf);
    double min_val = 0.0;
    int i = cur;
    int sink = -1;
    while (sink < 0) {
      sr[i] = 1;
      const double* row = cost.data() + static_cast<std::size_t>(i) * n;
      int index = -1;
      double lowest = kInf;
      for (int j = 0; j < n; ++j) {
        if (sc[j]) continue;
        const double r = min_val + row[j] - u[i] - v[j];
        if (r < shortest[j]) {
          path[j] = i;
          shortest[j] = r;
        }
        if (shortest[j] < lowest ||
            (shortest[j] == lowest && row4col[j] == -1)) {
          lowest = shortest[j];
          index = j;
        }
      }
      min_val = lowest;
      const int j = index;
      sc[j] = 1;
      if (row4col[j] == -1) {
        sink = j;
      } else {
        i = row4col[j];
      }
    }
    u[cur] += min_val;
    for (int ip = 0; ip < n; ++ip) {
      if (sr[ip] && ip != cur) u[ip] += min_val - shortest[col4row[ip]];
    }
    for (int j = 0; j < n; ++j) {
      if (sc[j]) v[j] -= min_val - shortest[j];
    }
    int j = sink;
    for (;;) {
      const int ip = path[j];
      row4col[j] = ip;
      std::swap(col4row[ip], j);
      if (ip == cur) break;
    }
  }
  return col4row;
}

/// Seeded subsample without replacement (partial Fisher-Yates).
inline std::vector<Eigen::VectorXd> subsample_points(
    const std::vector<Eigen::VectorXd>& points, std::size_t n, RngStream& rng) {
  if (n >= points.size()) return points;
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j =
        i + static_cast<std::size_t>(rng.uniform01() * double(order.size() - i));
    std::swap(order[i], order[std::min(j, order.size() - 1)]);
  }
  std::vector<Eigen::VectorXd> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(points[order[i]]);
  return out;
}

/// Systematic resampling of a weighted set down to n equal-weight points.
inline std::vector<Eigen::VectorXd> resample_equal_weight(
    const std::vector<Eigen::VectorXd>& points, const Eigen::VectorXd& weights,
    std::size_t n, RngStream& rng) {
  if (points.empty() || static_cast<Eigen::Index>(points.size()) != weights.size()) {
    throw std::invalid_argument("resample_equal_weight: bad inputs");
  }
  const double u = rng.uniform01();
  std::vector<Eigen::VectorXd> out;
  out.reserve(n);
  std::size_t j = 0;
  double cum = weights[0];
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = (static_cast<double>(i) + u) / static_cast<double>(n);
    while (pos > cum && j + 1 < points.size()) {
      ++j;
      cum += weights[static_cast<Eigen::Index>(j)];
    }
    out.push_back(points[j]);
  }
  return out;
}

inline constexpr std::size_t kWasserstein2MaxPoints = 4096;

/// Exact empirical Wasserstein-2 between equal-size point sets:
/// sqrt(min-cost perfect matching of squared distances / n). Sets larger
/// than 4096 points are subsampled with a seeded stream first.
inline double wasserstein2(std::vector<Eigen::VectorXd> a,
                           std::vector<Eigen::VectorXd> b,
                           std::uint64_t subsample_seed = 0) {
  if (a.empty() || b.empty()) {
    throw std::invalid_argument("wasserstein2: empty point set");
  }
  if (a.size() != b.size()) {
    throw std::invalid_argument("wasserstein2: sets must have equal size");
  }
  if (a.size() > kWasserstein2MaxPoints) {
    RngStream rng_a(subsample_seed, stream_node::kEval, 0, 0);
    RngStream rng_b(subsample_seed, stream_node::kEval, 1, 0);
    a = subsample_points(a, kWasserstein2MaxPoints, rng_a);
    b = subsample_points(b, kWasserstein2MaxPoints, rng_b);
  }
  const int n = static_cast<int>(a.size());
  std::vector<double> cost(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      cost[static_cast<std::size_t>(i) * n + j] =
          (a[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(j)])
              .squaredNorm();
    }
  }
  const std::vector<int> match = solve_assignment(cost, n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    total += cost[static_cast<std::size_t>(i) * n + match[i]];
  }
  return std::sqrt(total / n);
}

/// Equalizes a weighted set and a reference set to a common size and
/// returns their exact W2 (helper for metric reports).
inline double wasserstein2_weighted(const std::vector<Eigen::VectorXd>& points,
                                    const Eigen::VectorXd& weights,
                                    const std::vector<Eigen::VectorXd>& reference,
                                    std::uint64_t seed) {
  const std::size_t n =
      std::min({points.size(), reference.size(), kWasserstein2MaxPoints});
  RngStream rng_eq(seed, stream_node::kEval, 2, 0);
  RngStream rng_ref(seed, stream_node::kEval, 3, 0);
  return wasserstein2(resample_equal_weight(points, weights, n, rng_eq),
                      subsample_points(reference, n, rng_ref), seed);
}

struct ComponentStat {
  double mass = 0.0;
  Eigen::VectorXd mean;
};

/// Soft-assigns weighted samples by the reference mixture's
/// responsibilities; aggregates mass and mean per component.
inline std::vector<ComponentStat> component_stats(
    const std::vector<Eigen::VectorXd>& samples, const Eigen::VectorXd& weights,
    const GaussianMixture& posterior) {
  if (static_cast<Eigen::Index>(samples.size()) != weights.size()) {
    throw std::invalid_argument("component_stats: size mismatch");
  }
  const std::size_t c_count = posterior.size();
  std::vector<ComponentStat> stats(c_count);
  for (auto& s : stats) s.mean = Eigen::VectorXd::Zero(posterior.dim());

  std::vector<double> logs(c_count);
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const double w = weights[static_cast<Eigen::Index>(k)];
    double max_log = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < c_count; ++c) {
      const auto& comp = posterior.components()[c];
      logs[c] = std::log(comp.weight) +
                detail::log_gaussian_iso(samples[k], comp.mean, comp.variance);
      max_log = std::max(max_log, logs[c]);
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < c_count; ++c) sum += std::exp(logs[c] - max_log);
    for (std::size_t c = 0; c < c_count; ++c) {
      const double resp = std::exp(logs[c] - max_log) / sum;
      stats[c].mass += w * resp;
      stats[c].mean += w * resp * samples[k];
    }
  }
  for (auto& s : stats) {
    if (s.mass > 0.0) s.mean /= s.mass;
  }
  return stats;
}

/// Hard occupancy fractions by maximum responsibility.
inline Eigen::VectorXd occupancy_fractions(const GaussianMixture& m,
                                           const std::vector<Eigen::VectorXd>& pts) {
  Eigen::VectorXd frac = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.size()));
  for (const auto& x : pts) {
    double best = -std::numeric_limits<double>::infinity();
    Eigen::Index arg = 0;
    for (std::size_t c = 0; c < m.size(); ++c) {
      const auto& comp = m.components()[c];
      const double l = std::log(comp.weight) +
                       detail::log_gaussian_iso(x, comp.mean, comp.variance);
      if (l > best) {
        best = l;
        arg = static_cast<Eigen::Index>(c);
      }
    }
    frac[arg] += 1.0;
  }
  if (!pts.empty()) frac /= static_cast<double>(pts.size());
  return frac;
}

struct MomentSummary {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
  Eigen::VectorXd mean_se;       // standard error of the mean
  Eigen::VectorXd variance_se;   // standard error of the variance estimate
  std::size_t n = 0;
};

inline MomentSummary summarize_moments(const std::vector<Eigen::VectorXd>& pts) {
  if (pts.empty()) throw std::invalid_argument("summarize_moments: empty set");
  const int d = static_cast<int>(pts.front().size());
  const double n = static_cast<double>(pts.size());
  MomentSummary s;
  s.n = pts.size();
  s.mean = Eigen::VectorXd::Zero(d);
  for (const auto& x : pts) s.mean += x;
  s.mean /= n;
  s.variance = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd m4 = Eigen::VectorXd::Zero(d);
  for (const auto& x : pts) {
    const Eigen::ArrayXd c = (x - s.mean).array();
    s.variance += (c * c).matrix();
    m4 += (c * c * c * c).matrix();
  }
  s.variance /= n;
  m4 /= n;
  s.mean_se = (s.variance / n).cwiseSqrt();
  s.variance_se =
      ((m4 - s.variance.cwiseProduct(s.variance).cwiseMax(0.0)) / n)
          .cwiseMax(0.0)
          .cwiseSqrt();
  return s;
}

/// Largest |z| over per-coordinate mean and variance comparisons.
inline double max_moment_zscore(const MomentSummary& a, const MomentSummary& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.mean.size(); ++i) {
    const double se_mean =
        std::sqrt(a.mean_se[i] * a.mean_se[i] + b.mean_se[i] * b.mean_se[i]);
    const double se_var = std::sqrt(a.variance_se[i] * a.variance_se[i] +
                                    b.variance_se[i] * b.variance_se[i]);
    if (se_mean > 0.0) {
      worst = std::max(worst, std::abs(a.mean[i] - b.mean[i]) / se_mean);
    }
    if (se_var > 0.0) {
      worst = std::max(worst, std::abs(a.variance[i] - b.variance[i]) / se_var);
    }
  }
  return worst;
}

struct ConvergencePoint {
  int size = 0;
  double rmse = 0.0;
};

/// RMSE of a seeded estimator against a known truth, per size. The
/// estimator maps (size, seed) to its phi-estimate.
inline std::vector<ConvergencePoint> convergence_curve(
    const std::function<double(int, std::uint64_t)>& estimator,
    const std::vector<int>& sizes, int replicates, double truth,
    std::uint64_t base_seed) {
  if (replicates < 1) throw std::invalid_argument("replicates must be >= 1");
  for (std::size_t i = 1; i < sizes.size(); ++i) {
    if (sizes[i] <= sizes[i - 1]) {
      throw std::invalid_argument("sizes must be ascending");
    }
  }
  std::vector<ConvergencePoint> out;
  out.reserve(sizes.size());
  for (const int size : sizes) {
    double sq = 0.0;
    for (int r = 0; r < replicates; ++r) {
      const double est = estimator(size, base_seed + static_cast<std::uint64_t>(r));
      sq += (est - truth) * (est - truth);
    }
    out.push_back({size, std::sqrt(sq / replicates)});
  }
  return out;
}

/// Least-squares slope of log(rmse) against log(size).
inline double loglog_slope(const std::vector<ConvergencePoint>& curve) {
  if (curve.size() < 2) throw std::invalid_argument("need >= 2 curve points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& p : curve) {
    const double x = std::log(static_cast<double>(p.size));
    const double y = std::log(std::max(p.rmse, 1e-300));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(curve.size());
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace tflow
