#pragma once

#include <array>
#include <cstdint>

#include "lbt/ad/tensor.hpp"

namespace lbt::ad {

/// xoshiro256++ generator whose 256-bit state is filled by four successive
/// SplitMix64 outputs starting from the 64-bit seed.
///
/// Derived quantities:
///  - uniform(): top 53 bits of next() scaled by 2^-53, in [0, 1).
///  - standard normals: Box-Muller on pairs (u1, u2) with
///    r = sqrt(-2 ln(1 - u1)), z0 = r cos(2 pi u2), z1 = r sin(2 pi u2).
///    A tensor of n values consumes ceil(n / 2) pairs; the spare value of an
///    odd count is discarded.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  /// Independent generator for a named role (data, generator noise, ...):
  /// seeded with splitmix64(seed ^ splitmix64(stream + 1)).
  static Rng stream(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next();
  double uniform();
  /// Index drawn with probability proportional to weights[i]; the weights
  /// must sum to one.
  std::size_t categorical(std::span<const double> weights);

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
};

std::uint64_t splitmix64(std::uint64_t& state);

/// I.i.d. standard normal draws (see Rng for the exact transform).
Tensor sample_standard_normal(Rng& rng, const Shape& shape);

/// Uniform draws in [lo, hi).
Tensor sample_uniform(Rng& rng, const Shape& shape, double lo, double hi);

}  // namespace lbt::ad
