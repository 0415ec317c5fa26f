#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace advknn {

/// FNV-1a, used for artifact fingerprints and seed substreams.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a_bytes(const void* p, std::size_t n,
                                 std::uint64_t h = 0xcbf29ce484222325ull) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

/// Deterministic substream: the same (seed, purpose) pair always yields the
/// same generator, and distinct purposes decorrelate streams.
inline std::mt19937 seeded_rng(std::uint64_t seed, std::string_view purpose) {
    std::uint64_t h = fnv1a(purpose);
    h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return std::mt19937(static_cast<std::uint32_t>(h ^ (h >> 32)));
}

} // namespace advknn
