#include "hads/augment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>

#include "hads/errors.hpp"

namespace hads {

namespace {
std::atomic<std::uint64_t> g_physics_calls{0};

void check_range(const Range& r, const char* name) {
    if (!(r.lo <= r.hi)) throw ConfigError(std::string("augment: empty range for ") + name);
}
void check_prob(double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("augment: ") + name + " must lie in [0, 1]");
}
double draw(Rng& rng, const Range& r) { return r.lo == r.hi ? r.lo : uniform(rng, r.lo, r.hi); }
}  // namespace

AugConfig AugConfig::for_size(int side) {
    AugConfig cfg;
    cfg.elastic_alpha_px = 8.0 * side / 224.0;
    cfg.elastic_sigma_px = 6.0 * side / 224.0;
    return cfg;
}

void AugConfig::validate() const {
    check_range(sigma_s, "sigma_s");
    check_range(alpha, "alpha");
    check_range(g_min, "g_min");
    check_range(g_max, "g_max");
    check_prob(physics_prob, "physics_prob");
    check_prob(flip_prob, "flip_prob");
    check_prob(shadow_width_frac, "shadow_width_frac");
    if (sigma_s.lo < 0.05 || sigma_s.hi > 0.15) throw ConfigError("augment: sigma_s range must lie within [0.05, 0.15]");
    if (max_rotation_deg < 0.0 || elastic_alpha_px < 0.0 || elastic_sigma_px < 0.0)
        throw ConfigError("augment: rotation and elastic parameters must be nonnegative");
}

const char* to_string(PhysicsKind kind) {
    switch (kind) {
        case PhysicsKind::None: return "none";
        case PhysicsKind::Speckle: return "speckle";
        case PhysicsKind::Shadow: return "shadow";
        case PhysicsKind::Gain: return "gain";
    }
    return "none";
}

Image speckle_unclamped(const Image& img, double sigma_s, Rng& rng) {
    if (!(sigma_s >= 0.05 && sigma_s <= 0.15))
        throw ConfigError("speckle: sigma_s must lie in [0.05, 0.15], got " + std::to_string(sigma_s));
    std::normal_distribution<double> noise(0.0, sigma_s * 255.0);
    Image out = img;
    for (auto& v : out.pixels) v += noise(rng);
    return out;
}

Image speckle(const Image& img, double sigma_s, Rng& rng) {
    Image out = speckle_unclamped(img, sigma_s, rng);
    clamp_intensities(out);
    return out;
}

int shadow_width(int image_width, double frac) {
    return static_cast<int>(std::floor(frac * image_width));
}

Image apply_shadow(const Image& img, int x0, int width, double alpha) {
    if (x0 < 0 || width < 0 || x0 + width > img.width)
        throw DimensionError("shadow: band [" + std::to_string(x0) + ", " + std::to_string(x0 + width) +
                             ") outside image width " + std::to_string(img.width));
    Image out = img;
    for (int y = 0; y < img.height; ++y)
        for (int x = x0; x < x0 + width; ++x) out.at(x, y) = std::clamp(img.at(x, y) * alpha, 0.0, 255.0);
    return out;
}

Image shadow(const Image& img, const AugConfig& cfg, Rng& rng, PhysicsDraw* drawn) {
    if (img.width < 8) throw DimensionError("shadow: image width must be >= 8");
    const int w = shadow_width(img.width, cfg.shadow_width_frac);
    const int x0 = std::uniform_int_distribution<int>(0, img.width - w - 1)(rng);
    const double a = draw(rng, cfg.alpha);
    if (drawn) *drawn = PhysicsDraw{PhysicsKind::Shadow, 0.0, x0, w, a, 0.0, 0.0};
    return apply_shadow(img, x0, w, a);
}

Image apply_gain(const Image& img, double g_min, double g_max, bool clamp) {
    Image out = img;
    for (int y = 0; y < img.height; ++y) {
        const double g = g_min + (g_max - g_min) * y / static_cast<double>(img.height);
        for (int x = 0; x < img.width; ++x) out.at(x, y) = img.at(x, y) * g;
    }
    if (clamp) clamp_intensities(out);
    return out;
}

Image gain(const Image& img, const AugConfig& cfg, Rng& rng, PhysicsDraw* drawn) {
    if (img.height < 2) throw DimensionError("gain: image height must be >= 2");
    const double lo = draw(rng, cfg.g_min);
    const double hi = draw(rng, cfg.g_max);
    if (drawn) *drawn = PhysicsDraw{PhysicsKind::Gain, 0.0, 0, 0, 0.0, lo, hi};
    return apply_gain(img, lo, hi);
}

Image apply_physics(const Image& img, const AugConfig& cfg, Rng& rng, PhysicsDraw* drawn) {
    ++g_physics_calls;
    if (cfg.physics_prob < 1.0 && !(uniform(rng, 0.0, 1.0) < cfg.physics_prob)) {
        if (drawn) *drawn = PhysicsDraw{};
        return img;
    }
    switch (std::uniform_int_distribution<int>(0, 2)(rng)) {
        case 0: {
            const double s = draw(rng, cfg.sigma_s);
            if (drawn) *drawn = PhysicsDraw{PhysicsKind::Speckle, s, 0, 0, 0.0, 0.0, 0.0};
            return speckle(img, s, rng);
        }
        case 1: return shadow(img, cfg, rng, drawn);
        default: return gain(img, cfg, rng, drawn);
    }
}

std::uint64_t physics_invocation_count() { return g_physics_calls.load(); }

Image flip_horizontal(const Image& img) {
    Image out = img;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) out.at(x, y) = img.at(img.width - 1 - x, y);
    return out;
}

Image rotate(const Image& img, double angle_deg) {
    const double t = angle_deg * std::numbers::pi / 180.0;
    const double c = std::cos(t), s = std::sin(t);
    const double cx = (img.width - 1) / 2.0, cy = (img.height - 1) / 2.0;
    Image out = img;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            // inverse map: rotate the destination coordinate by -angle
            const double dx = x - cx, dy = y - cy;
            out.at(x, y) = img.bilinear(c * dx + s * dy + cx, -s * dx + c * dy + cy);
        }
    return out;
}

Image elastic(const Image& img, double alpha_px, double sigma_px, Rng& rng) {
    Image fx(img.width, img.height), fy(img.width, img.height);
    for (auto& v : fx.pixels) v = uniform(rng, -1.0, 1.0);
    for (auto& v : fy.pixels) v = uniform(rng, -1.0, 1.0);
    if (alpha_px == 0.0) return img;
    fx = gaussian_blur(fx, sigma_px);
    fy = gaussian_blur(fy, sigma_px);
    double peak = 0.0;
    for (double v : fx.pixels) peak = std::max(peak, std::abs(v));
    for (double v : fy.pixels) peak = std::max(peak, std::abs(v));
    if (peak == 0.0) return img;
    const double k = alpha_px / peak;
    Image out = img;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) out.at(x, y) = img.bilinear(x + k * fx.at(x, y), y + k * fy.at(x, y));
    return out;
}

Image apply_geometric(const Image& img, const AugConfig& cfg, Rng& rng, GeometricDraw* drawn) {
    GeometricDraw d;
    d.flipped = cfg.flip_prob > 0.0 && uniform(rng, 0.0, 1.0) < cfg.flip_prob;
    d.angle_deg = cfg.max_rotation_deg > 0.0 ? uniform(rng, -cfg.max_rotation_deg, cfg.max_rotation_deg) : 0.0;
    d.elastic_alpha_px = cfg.elastic_alpha_px;
    d.elastic_sigma_px = cfg.elastic_sigma_px;
    Image out = d.flipped ? flip_horizontal(img) : img;
    out = rotate(out, d.angle_deg);
    out = elastic(out, d.elastic_alpha_px, d.elastic_sigma_px, rng);
    clamp_intensities(out);
    if (drawn) *drawn = d;
    return out;
}

Tensor normalize_for_backbone(const Image& img) {
    if (img.width != img.height)
        throw DimensionError("normalize_for_backbone: image must be square, got " + std::to_string(img.width) + "x" +
                             std::to_string(img.height));
    constexpr double mean[3] = {0.485, 0.456, 0.406};
    constexpr double stdev[3] = {0.229, 0.224, 0.225};
    const std::size_t P = img.pixels.size();
    std::vector<double> out(3 * P);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < P; ++i) out[c * P + i] = (img.pixels[i] / 255.0 - mean[c]) / stdev[c];
    const auto S = static_cast<std::size_t>(img.width);
    return Tensor(Shape{3, S, S}, std::move(out));
}

}  // namespace hads
