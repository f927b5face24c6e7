#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace sfl {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent sub-streams from a run
// seed plus a tuple of coordinates (client id, round, epoch, ...).
constexpr uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, std::initializer_list<uint64_t> coords) {
  uint64_t s = mix64(seed);
  for (uint64_t c : coords) s = mix64(s ^ mix64(c + 0x632be59bd9b4e019ULL));
  return s;
}

inline Rng make_rng(uint64_t seed, std::initializer_list<uint64_t> coords) {
  return Rng(derive_seed(seed, coords));
}

// Stream tags keep derived seeds for different purposes apart.
namespace stream {
inline constexpr uint64_t kInit = 1;
inline constexpr uint64_t kShuffle = 2;
inline constexpr uint64_t kPartition = 3;
inline constexpr uint64_t kData = 4;
inline constexpr uint64_t kDpNoise = 5;
inline constexpr uint64_t kLaplace = 6;
}  // namespace stream

}  // namespace sfl
