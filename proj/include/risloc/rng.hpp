#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "risloc/types.hpp"

namespace risloc {

/// SplitMix64 finalizer; used to derive independent stream seeds from a base
/// seed and a tuple of indices.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path);

/// Explicitly seeded generator: std::mt19937_64 for the bit stream, 53-bit
/// uniform doubles, Box-Muller normals. The conversions are written out here so
/// the streams do not depend on the standard library's distribution classes.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Circularly symmetric complex Gaussian with E|z|^2 = variance.
  cplx complex_normal(double variance);
  /// Uniform point in the open ball |x - center| < radius, by rejection from the cube.
  Vec3 in_ball(const Vec3& center, double radius);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace risloc
