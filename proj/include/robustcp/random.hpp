#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace robustcp {

// Sampling helpers built on mt19937_64 raw bits. The engine itself is fully
// specified by the standard; std::normal_distribution, uniform_real and
// std::shuffle are not, and seeded streams here must be reproducible.

/// Uniform draw on [0, 1) with 53-bit resolution.
inline double uniform01(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

/// Standard normal draw (Box-Muller, cosine branch).
inline double standard_normal(std::mt19937_64& gen) {
  double u1 = uniform01(gen);
  while (u1 <= 0.0) u1 = uniform01(gen);
  const double u2 = uniform01(gen);
  constexpr double two_pi = 6.283185307179586476925287;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

/// Unbiased integer draw from [0, bound) by rejection.
inline std::uint64_t uniform_below(std::mt19937_64& gen, std::uint64_t bound) {
  // reject the first 2^64 mod bound values so the remainder is exact
  const std::uint64_t reject_below = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t r = gen();
    if (r >= reject_below) return r % bound;
  }
}

/// In-place Fisher-Yates shuffle with a pinned draw sequence.
template <typename T>
void shuffle_pinned(std::vector<T>& v, std::mt19937_64& gen) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform_below(gen, i));
    std::swap(v[i - 1], v[j]);
  }
}

/// Decorrelated sub-stream seed (splitmix64 finalizer over seed xor salt).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed ^ (salt * 0x9E3779B97F4A7C15ULL);
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace robustcp
