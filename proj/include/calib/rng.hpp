#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace calib {

/// splitmix64 state advance + output mix.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

/// Derive an independent 64-bit seed for a named purpose. Streams are keyed
/// by (seed, purpose, subkey), so adding new draws in one stream never
/// shifts the values produced by another.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose,
                                 std::uint64_t subkey = 0) {
  std::uint64_t s = seed ^ fnv1a64(purpose);
  std::uint64_t a = splitmix64_next(s);
  s ^= subkey * 0x9E3779B97F4A7C15ull;
  std::uint64_t b = splitmix64_next(s);
  return a ^ (b + 0x9E3779B97F4A7C15ull);
}

/// Deterministic counter-based random stream (splitmix64 core).
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::string_view purpose, std::uint64_t subkey = 0)
      : state_(derive_seed(seed, purpose, subkey)) {}

  std::uint64_t next_u64() { return splitmix64_next(state_); }

  /// Uniform in [0, 1), 53-bit resolution.
  double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; the pair is cached so draws come in a
  /// fixed, reproducible order.
  double next_gaussian() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    // u1 in (0, 1] so the log argument never vanishes.
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = next_uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  std::vector<double> gaussian_vector(std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = next_gaussian();
    return v;
  }

  /// Uniform integer in [0, n) without modulo bias (rejection).
  std::uint64_t next_below(std::uint64_t n) {
    std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace calib
