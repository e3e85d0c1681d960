#include "hads/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "hads/errors.hpp"
#include "hads/rng.hpp"

namespace hads {

namespace fs = std::filesystem;

int class_index(const std::string& name) {
    for (std::size_t c = 0; c < kClassNames.size(); ++c)
        if (name == kClassNames[c]) return static_cast<int>(c);
    throw DataError("unknown class name: " + name);
}

void LabeledDataset::validate() {
    class_counts = {};
    std::set<std::string> seen;
    for (const auto& s : items) {
        if (s.label < 0 || s.label > 2) throw DataError("dataset: label out of range for " + s.id);
        if (!seen.insert(s.id).second) throw DataError("dataset: duplicate id " + s.id);
        ++class_counts[static_cast<std::size_t>(s.label)];
    }
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
    LabeledDataset out;
    out.items.reserve(indices.size());
    for (auto i : indices) out.items.push_back(items.at(i));
    out.validate();
    return out;
}

std::array<std::size_t, 3> LabeledDataset::counts_of(std::span<const std::size_t> indices) const {
    std::array<std::size_t, 3> c{};
    for (auto i : indices) ++c[static_cast<std::size_t>(items.at(i).label)];
    return c;
}

LabeledDataset load_dataset(const fs::path& root) {
    if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root.string());
    LabeledDataset ds;
    for (std::size_t c = 0; c < kClassNames.size(); ++c) {
        const fs::path dir = root / kClassNames[c];
        if (!fs::is_directory(dir)) throw DataError("missing class directory: " + dir.string());
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file()) continue;
            const std::string name = entry.path().filename().string();
            if (name.find("_mask") != std::string::npos || name.starts_with('.')) continue;
            files.push_back(entry.path());
        }
        if (files.empty()) throw DataError("class directory has no images: " + dir.string());
        std::sort(files.begin(), files.end(),
                  [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
        for (const auto& f : files) {
            Sample s;
            s.id = std::string(kClassNames[c]) + "/" + f.stem().string();
            s.label = static_cast<int>(c);
            s.image = read_image(f);
            s.image.id = s.id;
            ds.items.push_back(std::move(s));
        }
    }
    ds.validate();
    return ds;
}

namespace {

std::array<std::vector<std::size_t>, 3> by_class(const LabeledDataset& ds, std::span<const std::size_t> indices) {
    std::array<std::vector<std::size_t>, 3> out;
    for (auto i : indices) out[static_cast<std::size_t>(ds.items.at(i).label)].push_back(i);
    for (auto& v : out) std::sort(v.begin(), v.end());
    return out;
}

constexpr std::uint64_t kSplitTag = fnv1a("split");
constexpr std::uint64_t kFoldTag = fnv1a("kfold");
constexpr std::uint64_t kSynthTag = fnv1a("synthetic");

}  // namespace

SplitPlan stratified_split(const LabeledDataset& ds, double test_frac, std::uint64_t seed) {
    if (!(test_frac >= 0.0 && test_frac < 1.0)) throw ConfigError("stratified_split: test_frac must lie in [0, 1)");
    std::vector<std::size_t> all(ds.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto groups = by_class(ds, all);
    SplitPlan plan;
    plan.seed = seed;
    for (std::size_t c = 0; c < groups.size(); ++c) {
        auto members = groups[c];
        if (members.size() < 2)
            throw DataError(std::string("stratified_split: class ") + kClassNames[c] + " needs at least 2 items, has " +
                            std::to_string(members.size()));
        const double want = test_frac * static_cast<double>(members.size());
        const auto n_test = static_cast<std::size_t>(std::ceil(want - 0.5));
        if (n_test >= members.size())
            throw DataError(std::string("stratified_split: test share leaves no training items for ") + kClassNames[c]);
        Rng rng = derive_rng(seed, {kSplitTag, c});
        shuffle_in_place(members, rng);
        plan.test.insert(plan.test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
        plan.train.insert(plan.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
    }
    std::sort(plan.train.begin(), plan.train.end());
    std::sort(plan.test.begin(), plan.test.end());
    return plan;
}

std::vector<Fold> stratified_kfold(const LabeledDataset& ds, std::span<const std::size_t> train, int k,
                                   std::uint64_t seed) {
    if (k < 2) throw ConfigError("stratified_kfold: need at least 2 folds, got " + std::to_string(k));
    const auto K = static_cast<std::size_t>(k);
    std::vector<std::vector<std::size_t>> buckets(K);
    std::size_t counter = 0;
    const auto groups = by_class(ds, train);
    for (std::size_t c = 0; c < groups.size(); ++c) {
        auto members = groups[c];
        if (members.size() < K)
            throw DataError(std::string("stratified_kfold: class ") + kClassNames[c] + " has " +
                            std::to_string(members.size()) + " items, fewer than " + std::to_string(K) + " folds");
        Rng rng = derive_rng(seed, {kFoldTag, c});
        shuffle_in_place(members, rng);
        for (auto i : members) buckets[counter++ % K].push_back(i);
    }
    std::vector<Fold> folds(K);
    for (std::size_t f = 0; f < K; ++f) {
        folds[f].val = buckets[f];
        for (std::size_t g = 0; g < K; ++g)
            if (g != f) folds[f].train.insert(folds[f].train.end(), buckets[g].begin(), buckets[g].end());
        std::sort(folds[f].val.begin(), folds[f].val.end());
        std::sort(folds[f].train.begin(), folds[f].train.end());
    }
    return folds;
}

// ---- synthetic generator -----------------------------------------------------

namespace {

Image tissue_background(int S, Rng& rng) {
    const double scale = S / 64.0;
    Image noise(S, S);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (auto& v : noise.pixels) v = n01(rng);
    // speckle grain a few pixels wide; bilinear resampling (rotation, elastic) barely changes it
    noise = gaussian_blur(noise, 1.5 * scale);
    double ss = 0.0;
    for (double v : noise.pixels) ss += v * v;
    const double norm = std::sqrt(ss / static_cast<double>(noise.pixels.size()));

    const double base = uniform(rng, 70.0, 110.0);
    const double grain = uniform(rng, 12.0, 20.0);
    // faint horizontal tissue layering
    const double band_amp = uniform(rng, 0.0, 10.0);
    const double band_freq = uniform(rng, 1.5, 4.0) * 2.0 * std::numbers::pi / S;
    const double band_phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    Image img(S, S);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x)
            img.at(x, y) = base + band_amp * std::sin(band_freq * y + band_phase) + grain * noise.at(x, y) / norm;
    return img;
}

void finish(Image& img) {
    for (auto& v : img.pixels) v = std::clamp(std::round(v), 0.0, 255.0);
}

Image benign_like(int S, Rng& rng) {
    Image img = tissue_background(S, rng);
    const double cx = uniform(rng, 0.35, 0.65) * S, cy = uniform(rng, 0.3, 0.6) * S;
    const double a = uniform(rng, 0.15, 0.25) * S, b = uniform(rng, 0.10, 0.17) * S;
    const double theta = uniform(rng, 0.0, std::numbers::pi);
    const double contrast = uniform(rng, 55.0, 90.0);
    const double c = std::cos(theta), s = std::sin(theta);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double u = (c * dx + s * dy) / a, v = (-s * dx + c * dy) / b;
            // signed distance in pixels, approximately; one-pixel antialiased rim
            const double d = (std::sqrt(u * u + v * v) - 1.0) * std::min(a, b);
            const double inside = std::clamp(0.5 - d, 0.0, 1.0);
            img.at(x, y) += contrast * inside;
        }
    return img;
}

Image malignant_like(int S, Rng& rng) {
    Image img = tissue_background(S, rng);
    const double cx = uniform(rng, 0.35, 0.65) * S, cy = uniform(rng, 0.28, 0.5) * S;
    const double r0 = uniform(rng, 0.13, 0.2) * S;
    const int n = std::uniform_int_distribution<int>(9, 15)(rng);
    std::vector<double> radii(static_cast<std::size_t>(n));
    for (auto& r : radii) r = r0 * uniform(rng, 0.55, 1.35);
    const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double contrast = uniform(rng, 55.0, 90.0);

    auto radius_at = [&](double phi) {
        double t = (phi - phase) / (2.0 * std::numbers::pi) * n;
        t -= std::floor(t / n) * n;
        const auto i = static_cast<std::size_t>(t) % static_cast<std::size_t>(n);
        const double f = t - std::floor(t);
        return radii[i] * (1.0 - f) + radii[(i + 1) % static_cast<std::size_t>(n)] * f;
    };
    Image mask(S, S);
    int xmin = S, xmax = -1, ymax = -1;
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            const double dx = x - cx, dy = y - cy;
            if (std::hypot(dx, dy) <= radius_at(std::atan2(dy, dx))) {
                mask.at(x, y) = 1.0;
                xmin = std::min(xmin, x);
                xmax = std::max(xmax, x);
                ymax = std::max(ymax, y);
            }
        }
    mask = gaussian_blur(mask, uniform(rng, 1.2, 2.0) * S / 64.0);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] += contrast * mask.pixels[i];

    if (xmax >= xmin) {
        // posterior shadow: darkened columns from the lesion's lower edge down
        const double atten = uniform(rng, 0.35, 0.6);
        const double soft = 2.0 * S / 64.0;
        const double x0 = xmin + 0.2 * (xmax - xmin), x1 = xmax - 0.2 * (xmax - xmin);
        for (int y = std::max(0, ymax - 1); y < S; ++y)
            for (int x = 0; x < S; ++x) {
                const double edge = std::min(x - x0, x1 - x);
                const double w = std::clamp(0.5 + edge / soft, 0.0, 1.0);
                img.at(x, y) *= 1.0 - atten * w;
            }
    }
    return img;
}

}  // namespace

LabeledDataset generate_synthetic(const std::array<std::size_t, 3>& counts, int side, std::uint64_t seed) {
    if (side < 16 || side % 16 != 0)
        throw ConfigError("generate_synthetic: side must be a positive multiple of 16, got " + std::to_string(side));
    for (std::size_t c = 0; c < 3; ++c)
        if (counts[c] < 1) throw ConfigError(std::string("generate_synthetic: need at least one ") + kClassNames[c] + " image");
    LabeledDataset ds;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < counts[c]; ++i) {
            Rng rng = derive_rng(seed, {kSynthTag, c, i});
            Sample s;
            s.label = static_cast<int>(c);
            char name[32];
            std::snprintf(name, sizeof name, "%s_%04zu", kClassNames[c], i);
            s.id = std::string(kClassNames[c]) + "/" + name;
            s.image = c == 0 ? benign_like(side, rng) : c == 1 ? malignant_like(side, rng) : tissue_background(side, rng);
            finish(s.image);
            s.image.id = s.id;
            ds.items.push_back(std::move(s));
        }
    ds.validate();
    return ds;
}

void write_dataset(const fs::path& root, const LabeledDataset& ds) {
    for (const char* name : kClassNames) fs::create_directories(root / name);
    std::ofstream manifest(root / "manifest.csv");
    if (!manifest) throw DataError("cannot write manifest in " + root.string());
    manifest << "id,relative_path,label\n";
    for (const auto& s : ds.items) {
        const std::string rel = s.id + ".pgm";
        write_pgm(root / rel, s.image);
        manifest << s.id << ',' << rel << ',' << s.label << '\n';
    }
    if (!manifest) throw DataError("manifest write failed in " + root.string());
}

}  // namespace hads
