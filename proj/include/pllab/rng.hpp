#pragma once

#include <cmath>
#include <cstdint>

namespace pllab {

/// Counter-based splittable PRNG.
///
/// Draw i of a stream is a pure function of (seed, stream, i): the splitmix64
/// finalizer applied to a keyed counter. Replica r of an ensemble owns stream
/// (base_seed, r), so results are reproducible and independent of thread
/// scheduling.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(derive_key(seed, stream)) {}

  /// Child generator with a decorrelated key.
  CounterRng split(std::uint64_t child) const {
    CounterRng rng(0);
    rng.key_ = mix(key_ ^ mix(child + 0x632be59bd9b4e019ULL));
    rng.counter_ = 0;
    return rng;
  }

  std::uint64_t next_u64() { return mix(key_ + (++counter_) * kGolden); }

  /// Uniform in [0, 1) with 53 random bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double next_uniform(double a, double b) { return a + (b - a) * next_unit(); }

  /// Standard normal (Box-Muller; the second sample of each pair is cached).
  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u = 0.0;
    do {
      u = next_unit();
    } while (u <= 0.0);
    const double radius = std::sqrt(-2.0 * std::log(u));
    const double angle = 2.0 * 3.14159265358979323846 * next_unit();
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Uniform integer in [0, n); rejection keeps it unbiased.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t min = (0ULL - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= min) return r % n;
    }
  }

  bool next_bool() { return (next_u64() >> 63) != 0; }

  /// +1 or -1 with equal probability.
  double next_sign() { return next_bool() ? 1.0 : -1.0; }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t derive_key(std::uint64_t seed, std::uint64_t stream) {
    return mix(mix(seed + kGolden) ^ mix(stream * 0xd2b74407b1ce6e93ULL + 0x8cb92ba72f3d8dd7ULL));
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace pllab
