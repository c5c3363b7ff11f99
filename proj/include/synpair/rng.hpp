#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <sstream>
#include <string>

namespace synpair {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derive a seed from a master seed and a tuple of integers, e.g.
/// derive_seed(seed, {stream_id, epoch, item}).
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = mix64(master);
  for (auto p : parts) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

// Stream identifiers so that augmentation, shuffling, noise and
// initialization never share a seed.
enum class Stream : std::uint64_t { Init = 1, Shuffle = 2, Augment = 3, Noise = 4, Queue = 5, Data = 6, Probe = 7 };

inline Rng make_rng(std::uint64_t master, Stream s) {
  return Rng(derive_seed(master, {static_cast<std::uint64_t>(s)}));
}

inline std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void restore_rng(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
}

/// Uniform double in [0,1) from the top 53 bits; stable across standard libraries.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

/// Standard normal via Box-Muller on uniform01, so draws do not depend on
/// the library's normal_distribution implementation.
inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace synpair
