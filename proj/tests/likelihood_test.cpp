#include "targetedflow/likelihood.hpp"

#include <cmath>

#include <catch2/catch_amalgamated.hpp>

#include "targetedflow/rng.hpp"
#include "test_util.hpp"

using namespace tflow;
using Catch::Approx;

TEST_CASE("log likelihood peak value in 2-D") {
  const GaussianLikelihood lik{Eigen::Vector2d(0.4, -0.7), 0.25};
  CHECK(log_likelihood(lik, lik.y) ==
        Approx(-std::log(2.0 * M_PI * 0.25)).epsilon(1e-12));
}

TEST_CASE("log likelihood is shift invariant") {
  const Eigen::Vector2d y(0.2, 1.3), x(-0.5, 0.8), delta(2.4, -1.1);
  const GaussianLikelihood lik{y, 0.7};
  const GaussianLikelihood shifted{y + delta, 0.7};
  CHECK(log_likelihood(lik, x) ==
        Approx(log_likelihood(shifted, x + delta)).epsilon(1e-14));
}

TEST_CASE("log likelihood matches an extended-precision recomputation") {
  RngStream rng(2, 0, 0, 0);
  for (int i = 0; i < 20; ++i) {
    const Eigen::VectorXd y = 3.0 * rng.normal_vector(3);
    const Eigen::VectorXd x = 3.0 * rng.normal_vector(3);
    const double var = 0.1 + rng.uniform01();
    const GaussianLikelihood lik{y, var};
    long double q = 0.0L;
    for (int j = 0; j < 3; ++j) {
      const long double d = static_cast<long double>(y[j]) - x[j];
      q += d * d;
    }
    const long double expected =
        -1.5L * std::log(2.0L * 3.14159265358979323846264338328L * var) -
        q / (2.0L * var);
    CHECK(log_likelihood(lik, x) ==
          Approx(static_cast<double>(expected)).epsilon(1e-12));
  }
}

TEST_CASE("gradient vanishes at the mode") {
  const GaussianLikelihood lik{Eigen::Vector2d(1.0, 2.0), 0.5};
  CHECK(grad_log_likelihood(lik, lik.y, {}).norm() == 0.0);
}

TEST_CASE("clipping rescales to the cap and preserves direction") {
  const GaussianLikelihood lik{Eigen::Vector2d(4.0, 0.0), 1.0};
  LikelihoodGuards guards;
  guards.clip_norm = 1.0;
  const Eigen::Vector2d x(0.0, 0.0);  // raw gradient (4, 0), norm 4
  const Eigen::VectorXd g = grad_log_likelihood(lik, x, guards);
  CHECK(g.norm() == Approx(1.0).epsilon(1e-14));
  CHECK(g[0] == Approx(1.0).epsilon(1e-14));
  CHECK(g[1] == Approx(0.0).margin(1e-14));
}

TEST_CASE("unclipped gradient matches finite differences") {
  const GaussianLikelihood lik{Eigen::Vector2d(0.3, -1.1), 0.4};
  RngStream rng(5, 0, 0, 0);
  for (int i = 0; i < 5; ++i) {
    const Eigen::VectorXd x = 2.0 * rng.normal_vector(2);
    const Eigen::VectorXd fd = tftest::fd_gradient(
        [&](const Eigen::VectorXd& p) { return log_likelihood(lik, p); }, x, 1e-5);
    CHECK((grad_log_likelihood(lik, x, {}) - fd).norm() < 1e-6);
  }
}

TEST_CASE("gradient norm never exceeds the cap") {
  LikelihoodGuards guards;
  guards.clip_norm = 2.5;
  const GaussianLikelihood lik{Eigen::Vector2d(0, 0), 0.05};
  RngStream rng(6, 0, 0, 0);
  for (int i = 0; i < 100; ++i) {
    const Eigen::VectorXd x = 5.0 * rng.normal_vector(2);
    CHECK(grad_log_likelihood(lik, x, guards).norm() <= 2.5 + 1e-12);
  }
}

TEST_CASE("floored likelihood values are bounded above and below") {
  const double eps2 = 1e-12;
  const GaussianLikelihood lik{Eigen::Vector2d(0, 0), 0.25};
  const double upper = std::pow(2.0 * M_PI * 0.25, -1.0) + eps2;  // d = 2
  RngStream rng(7, 0, 0, 0);
  for (int i = 0; i < 200; ++i) {
    const Eigen::VectorXd x = 20.0 * rng.normal_vector(2);
    const double val = std::exp(log_likelihood(lik, x)) + eps2;
    CHECK(val >= eps2);
    CHECK(val <= upper + 1e-15);
  }
}

TEST_CASE("guard validation rejects bad values") {
  LikelihoodGuards bad;
  bad.epsilon2 = 0.0;
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
  LikelihoodGuards bad_clip;
  bad_clip.clip_norm = -1.0;
  CHECK_THROWS_AS(validate(bad_clip), std::invalid_argument);
  const GaussianLikelihood bad_lik{Eigen::Vector2d(0, 0), -0.5};
  CHECK_THROWS_AS(validate(bad_lik), std::invalid_argument);
}
