#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace gnnfp {

// All randomness in the toolkit flows from one experiment seed through named
// substreams, so stages can be reordered or parallelized without perturbing
// each other's draws.
inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view stage) {
  // FNV-1a over the stage name, folded into the seed via splitmix64.
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : stage) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull + h;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view stage,
                              std::uint64_t index) {
  return mix_seed(mix_seed(seed, stage) + index * 0x9e3779b97f4a7c15ull, stage);
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::string_view stage) {
  return std::mt19937_64(mix_seed(seed, stage));
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::string_view stage,
                                std::uint64_t index) {
  return std::mt19937_64(mix_seed(seed, stage, index));
}

}  // namespace gnnfp
