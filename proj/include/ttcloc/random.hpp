#pragma once

#include <cstdint>
#include <random>

namespace ttcloc {

/// Seeded random source. Distributions are implemented here rather than taken
/// from <random> so that streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Independent stream for (seed, stream id), e.g. one per generated video.
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform01();
  double uniform(double lo, double hi);
  /// Uniform integer in [lo, hi], inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();
  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace ttcloc
