#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace famda {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// SplitMix64 generator. Update: state += 0x9E3779B97F4A7C15, output
/// mix64(state). uniform() uses the top 53 bits; uniform_int(n) is next() % n.
/// All derived draws are defined in terms of next(), so sequences agree
/// across platforms bit for bit (gaussian() additionally depends on libm).
class Rng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit constexpr Rng(std::uint64_t seed = 0) : state_(seed) {}

  /// Independent stream for (seed, index): per-step or per-image forks.
  static constexpr Rng derive(std::uint64_t seed, std::uint64_t index) {
    return Rng(mix64(seed ^ mix64(index + kGamma)));
  }

  constexpr std::uint64_t next() {
    state_ += kGamma;
    return mix64(state_);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform in [0, n); n must be positive.
  std::uint64_t uniform_int(std::uint64_t n) { return next() % n; }
  bool bernoulli(double p) { return uniform() < p; }

  /// Box-Muller, one value per call.
  double gaussian(double mean = 0.0, double sigma = 1.0) {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return mean + sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

}  // namespace famda
