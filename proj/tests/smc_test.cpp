#include "targetedflow/smc.hpp"

#include <cmath>
#include <limits>

#include <catch2/catch_amalgamated.hpp>

using namespace tflow;
using Catch::Approx;

TEST_CASE("normalization") {
  Eigen::VectorXd equal = Eigen::VectorXd::Constant(8, -3.7);
  const Eigen::VectorXd w = normalized_weights(equal);
  for (int i = 0; i < 8; ++i) CHECK(w[i] == Approx(0.125).epsilon(1e-14));
  CHECK(w.sum() == Approx(1.0).margin(1e-10));

  Eigen::VectorXd two(2);
  two << 0.0, -std::numeric_limits<double>::infinity();
  const Eigen::VectorXd w2 = normalized_weights(two);
  CHECK(w2[0] == 1.0);
  CHECK(w2[1] == 0.0);

  Eigen::VectorXd degenerate =
      Eigen::VectorXd::Constant(4, -std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(normalized_weights(degenerate), DegenerateWeightsError);
}

TEST_CASE("normalization matches an extended-precision recomputation") {
  RngStream rng(1, 0, 0, 0);
  Eigen::VectorXd lw(64);
  for (int i = 0; i < 64; ++i) lw[i] = 40.0 * (rng.uniform01() - 0.5);
  const Eigen::VectorXd w = normalized_weights(lw);
  long double total = 0.0L;
  for (int i = 0; i < 64; ++i) total += std::exp(static_cast<long double>(lw[i]));
  for (int i = 0; i < 64; ++i) {
    const long double expect = std::exp(static_cast<long double>(lw[i])) / total;
    CHECK(w[i] == Approx(static_cast<double>(expect)).epsilon(1e-12));
  }
}

TEST_CASE("effective sample size") {
  CHECK(effective_sample_size(Eigen::VectorXd::Constant(16, 1.0 / 16)) ==
        Approx(16.0).epsilon(1e-12));
  Eigen::VectorXd onehot = Eigen::VectorXd::Zero(10);
  onehot[3] = 1.0;
  CHECK(effective_sample_size(onehot) == Approx(1.0).epsilon(1e-12));
  Eigen::VectorXd half(4);
  half << 0.5, 0.5, 0.0, 0.0;
  CHECK(effective_sample_size(half) == Approx(2.0).epsilon(1e-12));
}

TEST_CASE("scale invariance of normalized weights and ESS") {
  // Dyadic log weights and a dyadic shift make the additions exact, so
  // downstream results must be bit-identical.
  Eigen::VectorXd lw(6);
  lw << -1.5, -0.25, -3.0, 0.5, -2.75, -0.625;
  Eigen::VectorXd shifted = lw.array() + 4.5;
  const Eigen::VectorXd w = normalized_weights(lw);
  const Eigen::VectorXd ws = normalized_weights(shifted);
  for (int i = 0; i < 6; ++i) CHECK(w[i] == ws[i]);
  CHECK(effective_sample_size(w) == effective_sample_size(ws));
  RngStream r1(5, 0, 0, 0), r2(5, 0, 0, 0);
  CHECK(resample_indices(w, ResampleScheme::Systematic, r1) ==
        resample_indices(ws, ResampleScheme::Systematic, r2));

  // Arbitrary scaling agrees to rounding.
  RngStream rng(2, 0, 0, 0);
  Eigen::VectorXd random_lw(32);
  for (int i = 0; i < 32; ++i) random_lw[i] = 10.0 * (rng.uniform01() - 0.5);
  const Eigen::VectorXd a = normalized_weights(random_lw);
  const Eigen::VectorXd b =
      normalized_weights(random_lw.array() + std::log(3.7));
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("one-hot weights send every offspring to the same ancestor") {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(7);
  w[4] = 1.0;
  for (const auto scheme :
       {ResampleScheme::Systematic, ResampleScheme::Multinomial}) {
    RngStream rng(3, 0, stream_slot::kResample, 1);
    for (const int idx : resample_indices(w, scheme, rng)) CHECK(idx == 4);
  }
}

TEST_CASE("systematic resampling of uniform weights is a permutation-free copy") {
  for (const int k : {4, 16, 64, 1000}) {
    Eigen::VectorXd w = Eigen::VectorXd::Constant(k, 1.0 / k);
    RngStream rng(4, 0, stream_slot::kResample, 2);
    const auto idx = resample_indices(w, ResampleScheme::Systematic, rng);
    for (int i = 0; i < k; ++i) CHECK(idx[static_cast<std::size_t>(i)] == i);
  }
}

TEST_CASE("systematic offspring counts are floor or ceil of K*w") {
  RngStream setup(6, 0, 0, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 16;
    Eigen::VectorXd lw(k);
    for (int i = 0; i < k; ++i) lw[i] = 3.0 * setup.normal();
    const Eigen::VectorXd w = normalized_weights(lw);
    RngStream rng(7, 0, stream_slot::kResample, static_cast<std::uint32_t>(trial));
    const auto idx = resample_indices(w, ResampleScheme::Systematic, rng);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
    for (const int i : idx) counts[i] += 1.0;
    for (int i = 0; i < k; ++i) {
      const double expected = k * w[i];
      CHECK(counts[i] >= std::floor(expected) - 1e-9);
      CHECK(counts[i] <= std::ceil(expected) + 1e-9);
    }
  }
}

TEST_CASE("resampling is unbiased: expected offspring equal K*w") {
  const int k = 8;
  Eigen::VectorXd lw(k);
  lw << 0.0, -1.0, -0.5, 0.3, -2.0, 0.1, -0.7, -1.4;
  const Eigen::VectorXd w = normalized_weights(lw);
  const int rounds = 100000;
  for (const auto scheme :
       {ResampleScheme::Systematic, ResampleScheme::Multinomial}) {
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
    for (int r = 0; r < rounds; ++r) {
      RngStream rng(8, 0, stream_slot::kResample, static_cast<std::uint32_t>(r));
      for (const int idx : resample_indices(w, scheme, rng)) counts[idx] += 1.0;
    }
    for (int i = 0; i < k; ++i) {
      const double mean_count = counts[i] / rounds;
      // Per-round offspring variance is at most that of a binomial draw.
      const double se = std::sqrt(k * w[i] * (1.0 - w[i]) / rounds);
      CHECK(std::abs(mean_count - k * w[i]) <= 4.0 * se + 1e-12);
    }
  }
}

TEST_CASE("resampling preserves weighted means in expectation") {
  const int k = 16;
  RngStream setup(9, 0, 0, 0);
  Eigen::VectorXd values(k), lw(k);
  for (int i = 0; i < k; ++i) {
    values[i] = setup.normal();
    lw[i] = setup.normal();
  }
  const Eigen::VectorXd w = normalized_weights(lw);
  const double weighted_mean = (w.array() * values.array()).sum();
  const int rounds = 200000;
  double acc = 0.0;
  for (int r = 0; r < rounds; ++r) {
    RngStream rng(10, 0, stream_slot::kResample, static_cast<std::uint32_t>(r));
    double m = 0.0;
    for (const int idx : resample_indices(w, ResampleScheme::Systematic, rng)) {
      m += values[idx];
    }
    acc += m / k;
  }
  const double mc_mean = acc / rounds;
  const double se = values.cwiseAbs().maxCoeff() / std::sqrt(double(rounds));
  CHECK(std::abs(mc_mean - weighted_mean) < 4.0 * se);
}
