#pragma once

#include <cstdint>
#include <string_view>

namespace bseg {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Independent stream seed for (global seed, key), e.g. a page id. The value
/// depends only on its inputs, never on scheduling order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view key, std::uint64_t salt = 0) {
  return splitmix64(splitmix64(seed ^ fnv1a64(key)) + salt);
}

}  // namespace bseg
