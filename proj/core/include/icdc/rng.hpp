#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace icdc {

// Named, independently seeded random streams. A stream is derived from
// (base_seed, name, index) so that pipeline stages can draw randomness in any
// order without disturbing one another, and per-item substreams (one per
// patient, one per sequence) stay reproducible under parallel generation.
//
// Derivation is fixed and documented so golden values stay valid:
//   state = splitmix64(base_seed ^ fnv1a64(name) ^ (index * 0x9e3779b97f4a7c15))
// feeding a std::mt19937_64. next_below(n) draws 64-bit words and rejects
// values above the largest multiple of n (unbiased modulo).

inline constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : s) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h *= 1099511628211ull;
  }
  return h;
}

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

class RngStream {
 public:
  RngStream(std::uint64_t base_seed, std::string_view name, std::uint64_t index = 0)
      : gen_(splitmix64(base_seed ^ fnv1a64(name) ^ (index * 0x9e3779b97f4a7c15ull))) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller (explicit so draws do not depend on the
  // standard library's distribution implementation).
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    cached_ = r * std::sin(theta);
    have_cached_ = true;
    return r * std::cos(theta);
  }

  // In-place Fisher-Yates shuffle.
  template <class RandomIt>
  void shuffle(RandomIt first, RandomIt last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const std::uint64_t j = next_below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

  // k distinct values from [0, n), in draw order (partial Fisher-Yates).
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    if (k > n) k = n;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(next_below(n - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
  }

 private:
  std::mt19937_64 gen_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace icdc
