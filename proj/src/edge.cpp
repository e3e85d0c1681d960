#include "hads/edge.hpp"

#include <algorithm>
#include <cmath>

#include "hads/errors.hpp"

namespace hads {

double EdgeMap::raw_energy() const {
    double s = 0.0;
    for (double v : magnitudes) s += v;
    return magnitudes.empty() ? 0.0 : s / static_cast<double>(magnitudes.size()) * scale;
}

EdgeMap sobel(const Image& img) {
    if (img.width < 3 || img.height < 3)
        throw DimensionError("sobel: image must be at least 3x3, got " + std::to_string(img.width) + "x" +
                             std::to_string(img.height));
    EdgeMap e;
    e.width = img.width;
    e.height = img.height;
    e.magnitudes.resize(img.pixels.size());
    auto I = [&](int x, int y) { return img.clamped(x, y) / 255.0; };
    double peak = 0.0;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double gx = -I(x - 1, y - 1) + I(x + 1, y - 1) - 2.0 * I(x - 1, y) + 2.0 * I(x + 1, y) -
                              I(x - 1, y + 1) + I(x + 1, y + 1);
            const double gy = -I(x - 1, y - 1) - 2.0 * I(x, y - 1) - I(x + 1, y - 1) + I(x - 1, y + 1) +
                              2.0 * I(x, y + 1) + I(x + 1, y + 1);
            const double m = std::sqrt(gx * gx + gy * gy);
            e.magnitudes[static_cast<std::size_t>(y) * img.width + x] = m;
            peak = std::max(peak, m);
        }
    e.scale = std::max(peak, 1e-8);
    for (auto& v : e.magnitudes) v /= e.scale;
    return e;
}

Tensor edge_to_tensor(const EdgeMap& e, int side) {
    if (e.width != side || e.height != side)
        throw DimensionError("edge_to_tensor: edge map is " + std::to_string(e.width) + "x" + std::to_string(e.height) +
                             ", model expects " + std::to_string(side) + "x" + std::to_string(side));
    const auto S = static_cast<std::size_t>(side);
    return Tensor(Shape{1, S, S}, e.magnitudes);
}

Image edge_to_image(const EdgeMap& e) {
    Image out(e.width, e.height);
    for (std::size_t i = 0; i < e.magnitudes.size(); ++i) out.pixels[i] = std::round(255.0 * e.magnitudes[i]);
    return out;
}

}  // namespace hads
