#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace bql {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_tag(std::uint64_t h, std::uint64_t t) { return splitmix64(h ^ splitmix64(t)); }

inline std::uint64_t mix_tag(std::uint64_t h, std::string_view t) {
  std::uint64_t v = 1469598103934665603ULL;
  for (unsigned char c : t) v = (v ^ c) * 1099511628211ULL;
  return mix_tag(h, v);
}

/// Child seed for a labelled sub-stream, e.g. derive_seed(seed, "fold", k).
template <class... Tags>
std::uint64_t derive_seed(std::uint64_t base, Tags... tags) {
  std::uint64_t h = splitmix64(base);
  ((h = mix_tag(h, tags)), ...);
  return h;
}

}  // namespace bql
