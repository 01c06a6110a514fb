#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedsim {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a master seed and a tuple of
// coordinates (round, client id, purpose tag, ...).
inline std::uint64_t mix_seed(std::uint64_t seed,
                              std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = splitmix64(seed);
  for (auto p : parts) h = splitmix64(h ^ splitmix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

// Stream tags used with mix_seed.
namespace stream {
inline constexpr std::uint64_t kModelInit = 1;
inline constexpr std::uint64_t kSampling = 2;
inline constexpr std::uint64_t kClient = 3;
inline constexpr std::uint64_t kRehearsal = 4;
inline constexpr std::uint64_t kAgentInit = 5;
inline constexpr std::uint64_t kAgentExplore = 6;
inline constexpr std::uint64_t kReplay = 7;
inline constexpr std::uint64_t kData = 8;
inline constexpr std::uint64_t kPartition = 9;
inline constexpr std::uint64_t kNoise = 10;
inline constexpr std::uint64_t kSplit = 11;
}  // namespace stream

}  // namespace fedsim
