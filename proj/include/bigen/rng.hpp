#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace bigen {

// Independent deterministic stream keyed by (seed, stream ids...).
inline std::mt19937_64 make_rng(std::initializer_list<std::uint64_t> keys) {
    std::vector<std::uint32_t> words;
    for (auto k : keys) {
        words.push_back(static_cast<std::uint32_t>(k));
        words.push_back(static_cast<std::uint32_t>(k >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return std::mt19937_64(seq);
}

// FNV-1a, stable across platforms.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace bigen
