#pragma once

// Training-time augmentation: ultrasound physics artifacts (speckle, acoustic
// shadow, time-gain variation) and geometric jitter. Every function is a pure
// function of its inputs and the supplied generator.

#include <cstdint>
#include <string>

#include "hads/image.hpp"
#include "hads/rng.hpp"
#include "hads/tensor.hpp"

namespace hads {

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

struct AugConfig {
    Range sigma_s{0.05, 0.15};  // fraction of 255
    double shadow_width_frac = 0.15;
    Range alpha{0.2, 0.5};
    Range g_min{0.6, 0.9};
    Range g_max{1.0, 1.3};
    double physics_prob = 1.0;
    double flip_prob = 0.5;
    double max_rotation_deg = 15.0;
    double elastic_alpha_px = 8.0;
    double elastic_sigma_px = 6.0;

    /// Defaults with the elastic parameters scaled from 224 px to `side`.
    static AugConfig for_size(int side);
    /// Throws ConfigError on an empty range or a probability outside [0, 1].
    void validate() const;
};

enum class PhysicsKind { None, Speckle, Shadow, Gain };
const char* to_string(PhysicsKind kind);

/// Parameters drawn for one physics augmentation (fields not used by `kind`
/// are left at zero).
struct PhysicsDraw {
    PhysicsKind kind = PhysicsKind::None;
    double sigma_s = 0.0;
    int x0 = 0;
    int width = 0;
    double alpha = 0.0;
    double g_min = 0.0;
    double g_max = 0.0;
};

struct GeometricDraw {
    bool flipped = false;
    double angle_deg = 0.0;
    double elastic_alpha_px = 0.0;
    double elastic_sigma_px = 0.0;
};

/// Additive Gaussian noise with std sigma_s * 255, sigma_s in [0.05, 0.15].
Image speckle(const Image& img, double sigma_s, Rng& rng);
/// Speckle without the final clamp (for measuring the raw residual).
Image speckle_unclamped(const Image& img, double sigma_s, Rng& rng);

/// Column band [x0, x0 + width) attenuated by alpha; width = floor(frac * W).
Image shadow(const Image& img, const AugConfig& cfg, Rng& rng, PhysicsDraw* drawn = nullptr);
Image apply_shadow(const Image& img, int x0, int width, double alpha);
int shadow_width(int image_width, double frac = 0.15);

/// Row y scaled by g_min + (g_max - g_min) * y / H.
Image gain(const Image& img, const AugConfig& cfg, Rng& rng, PhysicsDraw* drawn = nullptr);
Image apply_gain(const Image& img, double g_min, double g_max, bool clamp = true);

/// Chooses exactly one of speckle / shadow / gain uniformly (gated by
/// cfg.physics_prob) and applies it.
Image apply_physics(const Image& img, const AugConfig& cfg, Rng& rng, PhysicsDraw* drawn = nullptr);

/// Number of apply_physics calls made by this process.
std::uint64_t physics_invocation_count();

Image flip_horizontal(const Image& img);
/// Rotation about the image center, bilinear with edge replication.
Image rotate(const Image& img, double angle_deg);
/// Displacement field of uniform noise, Gaussian-smoothed with sigma_px and
/// rescaled so its largest component has magnitude alpha_px.
Image elastic(const Image& img, double alpha_px, double sigma_px, Rng& rng);

/// Flip (prob cfg.flip_prob), rotation ~ U(-max, max), then elastic warp.
Image apply_geometric(const Image& img, const AugConfig& cfg, Rng& rng, GeometricDraw* drawn = nullptr);

/// [0,255] gray -> [3 x S x S] with per-channel ImageNet mean/std.
Tensor normalize_for_backbone(const Image& img);

}  // namespace hads
