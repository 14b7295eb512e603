#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace cvfl {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Key derivation for named random streams:
//   h0 = splitmix64(master ^ fnv1a(name))
//   h_{k+1} = splitmix64(h_k ^ splitmix64(key_k))
// Each (name, keys...) tuple yields an independent stream, so a subsystem's
// randomness never depends on how much another subsystem consumed.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view name,
                                    std::initializer_list<std::uint64_t> keys = {}) noexcept {
  std::uint64_t h = splitmix64(master ^ fnv1a(name));
  for (std::uint64_t k : keys) h = splitmix64(h ^ splitmix64(k));
  return h;
}

inline Rng make_stream(std::uint64_t master, std::string_view name,
                       std::initializer_list<std::uint64_t> keys = {}) {
  return Rng(derive_seed(master, name, keys));
}

}  // namespace cvfl
