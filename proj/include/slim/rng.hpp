#pragma once

#include <cstdint>

namespace slim {

/// Seeded xorshift64* generator. The state is expanded from the seed with
/// one splitmix64 round so that small or zero seeds give a full-period
/// stream. Output is frozen by golden tests; do not change the constants.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution.
  double next_uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }
  /// Uniform integer in [0, bound). bound must be positive.
  std::uint64_t below(std::uint64_t bound);

  /// Independent generator for a named purpose; does not advance *this.
  Rng derive(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace slim
