#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace rfimpute {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Named substream of a root seed: each part is folded in with splitmix64,
/// so (base, {a, b}) and (base, {b, a}) give unrelated streams.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = splitmix64(base);
    for (auto p : parts) h = splitmix64(h ^ splitmix64(p + 0x632be59bd9b4e019ULL));
    return h;
}

// Substream tags.
inline constexpr std::uint64_t kMaskStream = 1;
inline constexpr std::uint64_t kForestStream = 2;
inline constexpr std::uint64_t kCvStream = 3;

/// Uniform integer in [0, bound); bound > 0.
inline std::size_t uniform_index(Rng& rng, std::size_t bound) {
    return std::uniform_int_distribution<std::size_t>(0, bound - 1)(rng);
}

}  // namespace rfimpute
