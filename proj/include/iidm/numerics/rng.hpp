#pragma once

#include "iidm/numerics/tensor.hpp"

#include <cstdint>

namespace iidm {

/// Counter-based generator. Draw number n (1-based) is
///
///   splitmix64_finalize(seed + n * 0x9E3779B97F4A7C15)
///
/// with the SplitMix64 finalizer constants 0xBF58476D1CE4E5B9 and
/// 0x94D049BB133111EB (shifts 30, 27, 31). The whole state is (seed, counter),
/// so any draw can be reproduced from those two integers alone.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();

  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  /// Standard normal via Box-Muller; consumes two counters per call.
  double normal();

  /// Independent generator for a named sub-stream.
  Rng fork(std::uint64_t stream) const;

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

/// Tensor of i.i.d. standard normals. Pairs of Box-Muller outputs fill
/// consecutive elements.
template <typename Scalar>
BasicTensor<Scalar> draw_normal(Rng& rng, const Shape& shape);

/// Tensor of i.i.d. uniforms in [lo, hi).
template <typename Scalar>
BasicTensor<Scalar> draw_uniform(Rng& rng, const Shape& shape, Scalar lo, Scalar hi);

}  // namespace iidm
