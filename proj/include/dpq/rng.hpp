#pragma once

#include <cmath>
#include <cstdint>
#include <cstddef>

namespace dpq {

/// SplitMix64 (Steele, Lea, Flood 2014). One 64-bit state word, full period,
/// identical output on every platform. Every randomized operation in the
/// library draws from this generator so that results are reproducible
/// bit-for-bit from a seed.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1), 53 mantissa bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// Uniform index in [0, n). n must be > 0.
  size_t index(size_t n) {
    return static_cast<size_t>(next_double() * static_cast<double>(n)) % n;
  }

  /// Standard normal via Box-Muller, always consuming exactly two draws.
  double next_gaussian() {
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();  // guard log(0)
    const double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

 private:
  uint64_t state_;
};

}  // namespace dpq
