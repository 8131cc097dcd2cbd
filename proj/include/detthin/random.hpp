#ifndef DETTHIN_RANDOM_HPP
#define DETTHIN_RANDOM_HPP

#include <cstdint>
#include <random>
#include <string_view>

namespace detthin {

/// The random stream every stochastic operation takes explicitly.
using Rng = std::mt19937_64;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Stable sub-seed for (seed, component, index). Does not depend on the
/// standard library's hash, so it is identical across builds.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view component,
                                 std::uint64_t index = 0) {
  std::uint64_t h = detail::splitmix64(seed ^ detail::fnv1a(component));
  return detail::splitmix64(h ^ detail::splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t seed, std::string_view component, std::uint64_t index = 0) {
  return Rng(derive_seed(seed, component, index));
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace detthin

#endif  // DETTHIN_RANDOM_HPP
