#include "lbt/ad/rng.hpp"

#include <cmath>
#include <numbers>

namespace lbt::ad {
namespace {

inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t sm = seed;
  for (auto& word : s_) word = splitmix64(sm);
}

Rng Rng::stream(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t tag = stream + 1;
  return Rng(seed ^ splitmix64(tag));
}

std::uint64_t Rng::next() {
  const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

std::size_t Rng::categorical(std::span<const double> weights) {
  const double u = uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  // Rounding slack: fall back to the last component with positive weight.
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  return 0;
}

Tensor sample_standard_normal(Rng& rng, const Shape& shape) {
  Tensor out(shape);
  auto dst = out.data();
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t i = 0; i < dst.size(); i += 2) {
    const double u1 = rng.uniform();
    const double u2 = rng.uniform();
    const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    dst[i] = r * std::cos(two_pi * u2);
    if (i + 1 < dst.size()) dst[i + 1] = r * std::sin(two_pi * u2);
  }
  return out;
}

Tensor sample_uniform(Rng& rng, const Shape& shape, double lo, double hi) {
  Tensor out(shape);
  for (double& v : out.data()) v = lo + (hi - lo) * rng.uniform();
  return out;
}

}  // namespace lbt::ad
