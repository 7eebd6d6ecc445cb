#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace censreg {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix64(seed);
  for (auto k : keys) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

/// Streams are keyed by role so that parallel row updates draw the same
/// numbers regardless of how rows are distributed across threads.
enum class StreamKind : std::uint64_t {
  beta = 1,
  sigma2 = 2,
  gamma_omega = 3,
  missing = 4,
  predict = 5,
  generate = 6,
  tilting = 7,
};

inline Rng make_stream(std::uint64_t seed, StreamKind kind, std::uint64_t a = 0, std::uint64_t b = 0) {
  return Rng(mix_seed(seed, {static_cast<std::uint64_t>(kind), a, b}));
}

inline double std_normal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

/// Uniform on the open interval (0, 1).
inline double open_uniform(Rng& rng) {
  // 53 random bits, offset by half a step so 0 is never produced.
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace censreg
