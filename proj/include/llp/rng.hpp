#pragma once

#include <cstdint>

namespace llp {

/// SplitMix64 generator. Dependency-free and bit-stable across platforms;
/// every seeded behaviour in the project (world generation, parameter
/// initialization, epoch shuffles) draws from one of these streams.
struct SplitMix64 {
  uint64_t state;

  explicit SplitMix64(uint64_t seed) : state(seed) {}

  uint64_t next() {
    state += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform draw in [0, 1) with 53 bits of precision.
  double u01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform draw in [-s, s).
  double symmetric(double s) { return (2.0 * u01() - 1.0) * s; }

  /// Uniform integer in [0, bound). bound must be nonzero.
  uint64_t below(uint64_t bound) { return next() % bound; }
};

/// One-shot stateless hash built from the SplitMix64 scrambler; used to key
/// lattice noise and palettes off (seed, coordinates) tuples.
inline uint64_t mix64(uint64_t a, uint64_t b) {
  SplitMix64 g(a ^ (b * 0xD1B54A32D192ED03ULL));
  return g.next();
}

}  // namespace llp
