#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace hads {

/// Single-channel intensity image, values nominally in [0, 255].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> pixels;  // row-major, height x width
    std::string id;

    Image() = default;
    Image(int w, int h, double fill = 0.0, std::string image_id = {});

    double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    /// Edge-replicating read.
    double clamped(int x, int y) const;
    /// Bilinear sample at continuous coordinates with edge-replicate padding.
    double bilinear(double x, double y) const;
};

void clamp_intensities(Image& img);

/// Separable Gaussian blur, kernel radius ceil(3 sigma), edge replication.
Image gaussian_blur(const Image& img, double sigma);

/// Bilinear resampling to side x side, half-pixel centers.
Image resize(const Image& img, int side);

/// 8-bit grayscale PGM (P5). Values are rounded and clamped to [0, 255].
void write_pgm(const std::filesystem::path& path, const Image& img);
Image read_pgm(const std::filesystem::path& path);

/// Reads PGM (P5/P2) or, when built with libpng, PNG. Multi-channel sources
/// are reduced to gray by averaging the color channels.
Image read_image(const std::filesystem::path& path);

bool png_supported();

}  // namespace hads
