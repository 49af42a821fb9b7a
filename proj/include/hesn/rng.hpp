#pragma once

// Deterministic, platform-independent random numbers.
//
// SplitMix64 drives everything. The standard <random> distributions are
// implementation-defined, so the uniform and normal transforms live here to
// keep seeded fixtures bit-identical across compilers.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>

namespace hesn {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  /// Independent child stream. Mixing the tag through the finalizer keeps
  /// derive(s, 1) and derive(s + 1, 0) unrelated.
  static Rng derive(std::uint64_t seed, std::uint64_t tag) {
    return Rng(mix(seed ^ mix(tag + 0x632be59bd9b4e019ULL)));
  }

  Rng split(std::uint64_t tag) { return derive(next_u64(), tag); }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (one draw per call, no cached spare).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Uniform integer in [0, n). Rejection keeps it unbiased.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t r = next_u64();
    while (r >= limit) r = next_u64();
    return r % n;
  }

  template <typename T>
  void shuffle(std::span<T> xs) {
    for (std::size_t i = xs.size(); i > 1; --i) {
      std::swap(xs[i - 1], xs[below(i)]);
    }
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace hesn
