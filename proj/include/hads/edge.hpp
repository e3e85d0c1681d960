#pragma once

#include <vector>

#include "hads/image.hpp"
#include "hads/tensor.hpp"

namespace hads {

/// Sobel gradient magnitude normalized to [0, 1] by its own peak.
struct EdgeMap {
    int width = 0;
    int height = 0;
    std::vector<double> magnitudes;
    /// Divisor applied during normalization: max(peak magnitude, 1e-8), with
    /// magnitudes computed on intensities scaled to [0, 1].
    double scale = 0.0;

    double at(int x, int y) const { return magnitudes[static_cast<std::size_t>(y) * width + x]; }
    /// Mean unnormalized magnitude.
    double raw_energy() const;
};

/// Gx = [-1 0 1; -2 0 2; -1 0 1], Gy = [-1 -2 -1; 0 0 0; 1 2 1] applied as
/// cross-correlation with edge-replicate borders on intensity / 255.
EdgeMap sobel(const Image& img);

/// [1 x S x S] tensor of the edge magnitudes; the map must be S x S.
Tensor edge_to_tensor(const EdgeMap& e, int side);

Image edge_to_image(const EdgeMap& e);

}  // namespace hads
