#pragma once

#include <cstdint>
#include <random>

namespace mman {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Stable derived streams: same (seed, salts...) always yields the same engine,
// which keeps interrupted and resumed runs on identical random sequences.
inline std::uint64_t derive_seed(std::uint64_t seed) { return splitmix64(seed); }

template <typename... Rest>
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt, Rest... rest) {
  return derive_seed(splitmix64(seed ^ splitmix64(salt)), rest...);
}

template <typename... Salts>
std::mt19937_64 make_rng(std::uint64_t seed, Salts... salts) {
  return std::mt19937_64(derive_seed(seed, static_cast<std::uint64_t>(salts)...));
}

// Uniform in [0,1) from the top 53 bits.
inline double uniform01(std::mt19937_64& rng) {
  return (rng() >> 11) * (1.0 / 9007199254740992.0);
}

inline double uniform_in(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

inline double normal01(std::mt19937_64& rng) {
  // Box-Muller on controlled uniforms; std::normal_distribution is not
  // stable across standard libraries.
  double u1 = uniform01(rng);
  while (u1 <= 0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace mman
