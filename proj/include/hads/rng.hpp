#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace hads {

using Rng = std::mt19937_64;

/// FNV-1a, used to turn string ids into stable seed material.
constexpr std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 14695981039346656037ull;
    for (char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

/// Derives an independent stream from a base seed and a list of integer tags
/// (fold, epoch, batch, hashed ids...). Order of evaluation never matters,
/// so per-item streams are reproducible regardless of processing order.
inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ull;
    for (std::uint64_t t : tags) {
        // splitmix64 finalizer over the running state
        h += t + 0x9e3779b97f4a7c15ull;
        h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
        h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
        h ^= h >> 31;
    }
    return Rng(h);
}

inline double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Fisher-Yates driven directly by the raw engine output, so the permutation
/// does not depend on the standard library's distribution implementations.
template <typename T>
void shuffle_in_place(std::vector<T>& items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace hads
