#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace retseg {

using Rng = std::mt19937_64;

// Counter-based seed splitting. Every stochastic component derives its own
// stream from (global seed, stream tag, counter), so stages can be replayed
// independently of what ran before them.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t counter = 0);

inline Rng make_rng(std::uint64_t seed, std::string_view tag, std::uint64_t counter = 0) {
  return Rng(derive_seed(seed, tag, counter));
}

// 64-bit FNV-1a over raw bytes; used for parameter and config fingerprints.
std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace retseg
