#include "targetedflow/eval.hpp"

#include <algorithm>
#include <cmath>

#include <catch2/catch_amalgamated.hpp>

using namespace tflow;
using Catch::Approx;

namespace {

std::vector<Eigen::VectorXd> random_points(int n, int d, std::uint64_t seed,
                                           double spread = 1.0) {
  RngStream rng(seed, 0, 0, 0);
  std::vector<Eigen::VectorXd> pts;
  pts.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pts.push_back(spread * rng.normal_vector(d));
  return pts;
}

/// Exhaustive minimum matching cost for small sets.
double brute_force_w2(const std::vector<Eigen::VectorXd>& a,
                      const std::vector<Eigen::VectorXd>& b) {
  const int n = static_cast<int>(a.size());
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double cost = 0.0;
    for (int i = 0; i < n; ++i) {
      cost += (a[static_cast<std::size_t>(i)] -
               b[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])])
                  .squaredNorm();
    }
    best = std::min(best, cost);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best / n);
}

}  // namespace

TEST_CASE("wasserstein2 edge cases") {
  const auto pts = random_points(10, 2, 1);
  CHECK(wasserstein2(pts, pts) == Approx(0.0).margin(1e-12));
  const std::vector<Eigen::VectorXd> p{Eigen::Vector2d(0, 0)};
  const std::vector<Eigen::VectorXd> q{Eigen::Vector2d(3, 4)};
  CHECK(wasserstein2(p, q) == Approx(5.0).epsilon(1e-12));
  CHECK_THROWS_AS(wasserstein2({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(wasserstein2(p, pts), std::invalid_argument);
}

TEST_CASE("wasserstein2 equals brute force on 3-point sets") {
  for (std::uint64_t seed = 2; seed < 12; ++seed) {
    const auto a = random_points(3, 2, seed);
    const auto b = random_points(3, 2, seed + 100);
    CHECK(wasserstein2(a, b) == Approx(brute_force_w2(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("wasserstein2 equals brute force up to 7 points") {
  for (const int n : {4, 5, 6, 7}) {
    const auto a = random_points(n, 3, 40 + static_cast<std::uint64_t>(n));
    const auto b = random_points(n, 3, 80 + static_cast<std::uint64_t>(n));
    CHECK(wasserstein2(a, b) == Approx(brute_force_w2(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("wasserstein2 is symmetric and satisfies the triangle inequality") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto a = random_points(24, 2, 200 + seed);
    const auto b = random_points(24, 2, 300 + seed, 1.4);
    const auto c = random_points(24, 2, 400 + seed, 0.7);
    const double ab = wasserstein2(a, b);
    const double ba = wasserstein2(b, a);
    CHECK(ab == Approx(ba).margin(1e-9));
    CHECK(ab <= wasserstein2(a, c) + wasserstein2(c, b) + 1e-9);
  }
}

TEST_CASE("wasserstein2 is stable under tiny jitter") {
  auto a = random_points(32, 2, 7);
  auto b = a;
  RngStream rng(8, 0, 0, 0);
  for (auto& x : b) x += 1e-9 * rng.normal_vector(2);
  CHECK(wasserstein2(a, b) <= 1e-8);
}

TEST_CASE("component stats recover mixture structure") {
  const GaussianMixture toy = toy_data_mixture();
  const GaussianLikelihood lik{Eigen::Vector2d(0, 0), 0.25};
  const GaussianMixture post = posterior_mixture(toy, lik);

  // i.i.d. posterior draws with uniform weights.
  const int n = 20000;
  RngStream rng(10, stream_node::kGroundTruth, 0, 0);
  std::vector<Eigen::VectorXd> draws;
  draws.reserve(n);
  for (int i = 0; i < n; ++i) draws.push_back(sample_mixture(post, rng));
  const Eigen::VectorXd w = Eigen::VectorXd::Constant(n, 1.0 / n);
  const auto stats = component_stats(draws, w, post);
  double total = 0.0;
  for (std::size_t c = 0; c < stats.size(); ++c) {
    const double p = post.components()[c].weight;
    const double se = std::sqrt(p * (1.0 - p) / n);
    CHECK(stats[c].mass == Approx(p).margin(3.0 * se + 1e-3));
    total += stats[c].mass;
  }
  CHECK(total == Approx(1.0).margin(1e-8));

  // Everything at one component mean.
  std::vector<Eigen::VectorXd> at_mean(100, post.components()[0].mean);
  const auto one = component_stats(
      at_mean, Eigen::VectorXd::Constant(100, 0.01), post);
  CHECK(one[0].mass == Approx(1.0).margin(1e-6));

  // Mirror-symmetric samples over a symmetric mixture get equal masses.
  GaussianComponent ca{0.5, Eigen::Vector2d(-1, 0), 0.2};
  GaussianComponent cb{0.5, Eigen::Vector2d(1, 0), 0.2};
  const GaussianMixture sym(2, {ca, cb});
  std::vector<Eigen::VectorXd> mirrored;
  RngStream rng2(11, 0, 0, 0);
  for (int i = 0; i < 500; ++i) {
    const Eigen::VectorXd x = rng2.normal_vector(2);
    mirrored.push_back(x);
    mirrored.push_back(Eigen::Vector2d(-x[0], x[1]));
  }
  const auto sym_stats = component_stats(
      mirrored, Eigen::VectorXd::Constant(1000, 1e-3), sym);
  CHECK(sym_stats[0].mass == Approx(sym_stats[1].mass).margin(1e-10));
}

TEST_CASE("convergence curve on stub estimators") {
  // Perfect estimator: zero RMSE at every size.
  const auto zero = convergence_curve(
      [](int, std::uint64_t) { return 0.42; }, {10, 100, 1000}, 5, 0.42, 0);
  for (const auto& p : zero) CHECK(p.rmse == Approx(0.0).margin(1e-15));

  // i.i.d.-sampling estimator: RMSE follows size^{-1/2}.
  const GaussianMixture toy = toy_data_mixture();
  const GaussianLikelihood lik{Eigen::Vector2d(0, 0), 0.25};
  const GaussianMixture post = posterior_mixture(toy, lik);
  double truth = 0.0;
  for (const auto& c : post.components()) truth += c.weight * c.mean[0];
  auto iid = [&](int size, std::uint64_t seed) {
    RngStream rng(seed, stream_node::kGroundTruth, 1, 0);
    double acc = 0.0;
    for (int i = 0; i < size; ++i) acc += sample_mixture(post, rng)[0];
    return acc / size;
  };
  const auto curve =
      convergence_curve(iid, {256, 1024, 4096, 16384}, 40, truth, 17);
  CHECK(loglog_slope(curve) == Approx(-0.5).margin(0.1));

  CHECK_THROWS_AS(convergence_curve([](int, std::uint64_t) { return 0.0; },
                                    {100, 100}, 3, 0.0, 0),
                  std::invalid_argument);
}

TEST_CASE("equal-weight resampling and subsampling are deterministic") {
  const auto pts = random_points(50, 2, 21);
  Eigen::VectorXd lw(50);
  RngStream rng(22, 0, 0, 0);
  for (int i = 0; i < 50; ++i) lw[i] = rng.normal();
  const Eigen::VectorXd w = normalized_weights(lw);
  RngStream r1(23, stream_node::kEval, 0, 0), r2(23, stream_node::kEval, 0, 0);
  const auto a = resample_equal_weight(pts, w, 30, r1);
  const auto b = resample_equal_weight(pts, w, 30, r2);
  REQUIRE(a.size() == 30);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

  RngStream s1(24, stream_node::kEval, 0, 0), s2(24, stream_node::kEval, 0, 0);
  const auto sa = subsample_points(pts, 20, s1);
  const auto sb = subsample_points(pts, 20, s2);
  REQUIRE(sa.size() == 20);
  for (std::size_t i = 0; i < sa.size(); ++i) CHECK(sa[i] == sb[i]);
}

TEST_CASE("loglog slope recovers an exact power law") {
  std::vector<ConvergencePoint> curve{{100, 1.0}, {400, 0.5}, {1600, 0.25}};
  CHECK(loglog_slope(curve) == Approx(-0.5).epsilon(1e-12));
}
