#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hads/image.hpp"

namespace hads {

inline constexpr std::array<const char*, 3> kClassNames{"benign", "malignant", "normal"};

/// Maps "benign"/"malignant"/"normal" to 0/1/2; anything else is a DataError.
int class_index(const std::string& name);

struct Sample {
    Image image;
    int label = 0;
    std::string id;  // "<class>/<file stem>"
};

struct LabeledDataset {
    std::vector<Sample> items;
    std::array<std::size_t, 3> class_counts{};

    std::size_t size() const { return items.size(); }
    /// Recomputes class_counts and checks labels and id uniqueness.
    void validate();
    LabeledDataset subset(std::span<const std::size_t> indices) const;
    std::array<std::size_t, 3> counts_of(std::span<const std::size_t> indices) const;
};

/// One subdirectory per class (benign/, malignant/, normal/). Files whose name
/// contains "_mask" are skipped; the rest are read as grayscale in filename order.
LabeledDataset load_dataset(const std::filesystem::path& root);

struct Fold {
    std::vector<std::size_t> train;  // indices into the source dataset
    std::vector<std::size_t> val;
};

struct SplitPlan {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
    std::vector<Fold> folds;
    std::uint64_t seed = 0;
};

/// Per-class test count round(test_frac * N_c) with ties rounded down; members
/// chosen by a seeded shuffle within each class. Index lists come back sorted.
SplitPlan stratified_split(const LabeledDataset& ds, double test_frac, std::uint64_t seed);

/// Per class: seeded shuffle, then round-robin into K validation buckets. The
/// bucket counter carries over from one class to the next so bucket totals
/// stay balanced as well.
std::vector<Fold> stratified_kfold(const LabeledDataset& ds, std::span<const std::size_t> train, int k,
                                   std::uint64_t seed);

/// Desk-scale stand-in data. Class 0: bright smooth ellipse with a crisp rim;
/// class 1: irregular bright polygon with a blurred rim and a dark column
/// below it; class 2: background only. All share the same speckled tissue
/// background process. Pixel values are integers in [0, 255], so a dataset
/// written to PGM reloads bit-identically.
LabeledDataset generate_synthetic(const std::array<std::size_t, 3>& counts, int side, std::uint64_t seed);

/// Writes <root>/<id>.pgm for every item and <root>/manifest.csv with rows
/// `id,relative_path,label`.
void write_dataset(const std::filesystem::path& root, const LabeledDataset& ds);

}  // namespace hads
