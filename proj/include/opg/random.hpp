// Copyright (C) 2026 OPG Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace opg {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// FNV-1a, used to fold string image ids into seeds.
inline std::uint64_t hash_id(std::string_view id) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char ch : id) {
        h ^= ch;
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// Seed split function: every per-image / per-branch / per-step stream is
/// derived from the global seed by chaining splitmix64 over the four keys.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view image_id,
                                 std::uint64_t branch = 0, std::uint64_t step = 0) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ hash_id(image_id));
    h = splitmix64(h ^ branch);
    return splitmix64(h ^ step);
}

inline Rng make_rng(std::uint64_t seed, std::string_view image_id = {},
                    std::uint64_t branch = 0, std::uint64_t step = 0) {
    return Rng(derive_seed(seed, image_id, branch, step));
}

/// Unbiased integer in [0, n) by rejection; n must be positive. Spelled out
/// instead of std::uniform_int_distribution so streams match across standard
/// libraries.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    // Reject the tail above the largest multiple of n that fits in 2^64.
    const std::uint64_t bound = Rng::max() - ((Rng::max() - n + 1) % n);
    std::uint64_t draw = rng();
    while (draw > bound) draw = rng();
    return draw % n;
}

/// Uniform real in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

/// Standard normal via Box-Muller (one value per call, second discarded).
inline double normal(Rng& rng) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace opg
