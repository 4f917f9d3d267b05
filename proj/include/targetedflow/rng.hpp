#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include <Eigen/Core>

namespace tflow {

/// Philox4x32-10 counter-based block cipher (Salmon et al. constants).
/// One 128-bit counter + 64-bit key in, four statistically independent
/// 32-bit words out. Stateless, so streams can be carved out of the
/// counter space and evaluated in any order.
struct Philox4x32 {
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                            std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t(kMul0) * ctr[0];
      const std::uint64_t p1 = std::uint64_t(kMul1) * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
             static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
             static_cast<std::uint32_t>(p0)};
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }
};

/// Reserved stream slots. Ordinary particle slots use their index; the
/// high values are tags for machinery that must not share a stream with
/// any particle.
namespace stream_slot {
inline constexpr std::uint32_t kResample = 0xFFFFFFFFu;
}  // namespace stream_slot

namespace stream_node {
inline constexpr std::uint32_t kOuter = 0xFFFFFFFFu;        // node-level resampler
inline constexpr std::uint32_t kDirectIs = 0xFFFFFFF0u;     // baseline samplers
inline constexpr std::uint32_t kGuidedOde = 0xFFFFFFF1u;
inline constexpr std::uint32_t kUnconditional = 0xFFFFFFF2u;
inline constexpr std::uint32_t kGroundTruth = 0xFFFFFFF3u;
inline constexpr std::uint32_t kEval = 0xFFFFFFF4u;
}  // namespace stream_node

/// One logical random stream, addressed by (seed, node, slot, step).
/// Consecutive draws advance a private block counter, so any two
/// distinct addresses yield independent sequences and results never
/// depend on evaluation order across streams.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint32_t node, std::uint32_t slot,
            std::uint32_t step)
      : key_{static_cast<std::uint32_t>(seed),
             static_cast<std::uint32_t>(seed >> 32)},
        base_{0u, step, slot, node} {}

  std::uint32_t next_u32() {
    if (pos_ == 4) refill();
    return buf_[pos_++];
  }

  std::uint64_t next_u64() {
    const std::uint64_t lo = next_u32();
    const std::uint64_t hi = next_u32();
    return (hi << 32) | lo;
  }

  /// Uniform on the open interval (0, 1).
  double uniform01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; the spare deviate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  Eigen::VectorXd normal_vector(int dim) {
    Eigen::VectorXd z(dim);
    for (int i = 0; i < dim; ++i) z[i] = normal();
    return z;
  }

 private:
  void refill() {
    auto ctr = base_;
    ctr[0] = block_;
    buf_ = Philox4x32::block(ctr, key_);
    ++block_;
    pos_ = 0;
  }

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> base_;
  std::array<std::uint32_t, 4> buf_{};
  std::uint32_t block_ = 0;
  int pos_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Factory fixing (seed, node, slot); callers open a fresh stream per step.
struct StreamFactory {
  std::uint64_t seed = 0;
  std::uint32_t node = 0;
  std::uint32_t slot = 0;

  RngStream at_step(std::uint32_t step) const {
    return RngStream(seed, node, slot, step);
  }
};

}  // namespace tflow
