#pragma once
#include <cstdint>
#include <vector>

#include "hads/rng.hpp"
#include "hads/tensor.hpp"

namespace testing {

inline hads::Tensor random_tensor(hads::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    hads::Rng rng(seed);
    std::vector<double> v(hads::shape_numel(shape));
    for (auto& x : v) x = hads::uniform(rng, lo, hi);
    return hads::Tensor(std::move(shape), std::move(v));
}

// Weighted sum with fixed pseudo-random weights, so every output entry
// carries a distinct upstream gradient.
inline hads::Tensor probe_sum(const hads::Tensor& t, std::uint64_t seed = 99) {
    return hads::sum(hads::mul(t, random_tensor(t.shape(), seed)));
}

}  // namespace testing
