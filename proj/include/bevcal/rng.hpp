#pragma once

#include <cmath>
#include <cstdint>

namespace bevcal {

/// Counter-based pseudo-random generator (splitmix64 core).
///
/// The sequence is a pure function of the 64-bit seed and the draw counter,
/// so results are bit-identical across platforms and independent streams can
/// be derived by hashing (seed, stream ids) together. Not cryptographic.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  /// Derive an independent stream from a base seed and up to three ids.
  static Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                    std::uint64_t c = 0) {
    std::uint64_t s = mix(seed ^ 0x9e3779b97f4a7c15ULL);
    s = mix(s ^ mix(a ^ 0xbf58476d1ce4e5b9ULL));
    s = mix(s ^ mix(b ^ 0x94d049bb133111ebULL));
    s = mix(s ^ mix(c ^ 0xd6e8feb86659fd93ULL));
    return Rng(s);
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Symmetric uniform in [-bound, bound].
  double symmetric(double bound) { return uniform(-bound, bound); }

  /// Standard normal via Box-Muller (portable, unlike std distributions).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    // Avoid log(0).
    u1 = u1 > 0.0 ? u1 : 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t state_;
};

}  // namespace bevcal
