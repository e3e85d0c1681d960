#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "hads/data.hpp"
#include "hads/edge.hpp"
#include "hads/errors.hpp"

using namespace hads;
namespace fs = std::filesystem;

namespace {

LabeledDataset labels_only(const std::array<std::size_t, 3>& counts) {
    LabeledDataset ds;
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < counts[c]; ++i)
            ds.items.push_back(Sample{Image(8, 8), c, std::string(kClassNames[c]) + "/" + std::to_string(i)});
    ds.validate();
    return ds;
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("hads_data_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("class names") {
    CHECK(class_index("benign") == 0);
    CHECK(class_index("malignant") == 1);
    CHECK(class_index("normal") == 2);
    CHECK_THROWS_AS(class_index("Benign"), DataError);
}

TEST_CASE("stratified split of 437/210/133 at 15%") {
    auto ds = labels_only({437, 210, 133});
    auto plan = stratified_split(ds, 0.15, 42);
    const auto test = ds.counts_of(plan.test);
    CHECK(test[0] == 66);
    CHECK(test[1] == 31);  // 31.5 rounds down
    CHECK(test[2] == 20);
    const auto train = ds.counts_of(plan.train);
    CHECK(train[0] == 371);
    CHECK(train[1] == 179);
    CHECK(train[2] == 113);

    CHECK(std::is_sorted(plan.test.begin(), plan.test.end()));
    CHECK(std::is_sorted(plan.train.begin(), plan.train.end()));
    std::vector<std::size_t> both;
    std::set_intersection(plan.test.begin(), plan.test.end(), plan.train.begin(), plan.train.end(),
                          std::back_inserter(both));
    CHECK(both.empty());
    CHECK(plan.test.size() + plan.train.size() == ds.size());

    auto again = stratified_split(ds, 0.15, 42);
    CHECK(again.test == plan.test);
    auto other = stratified_split(ds, 0.15, 43);
    CHECK(other.test != plan.test);
}

TEST_CASE("stratified k-fold deviates by at most one per class") {
    auto ds = labels_only({437, 210, 133});
    auto plan = stratified_split(ds, 0.15, 7);
    auto folds = stratified_kfold(ds, plan.train, 5, 7);
    REQUIRE(folds.size() == 5);
    const std::array<std::size_t, 3> train_counts{371, 179, 113};
    std::multiset<std::size_t> seen;
    for (const auto& f : folds) {
        const auto v = ds.counts_of(f.val);
        for (int c = 0; c < 3; ++c) {
            const double ideal = train_counts[c] / 5.0;
            CHECK(std::abs(static_cast<double>(v[c]) - ideal) <= 1.0);
        }
        CHECK(f.train.size() + f.val.size() == plan.train.size());
        std::vector<std::size_t> overlap;
        std::set_intersection(f.train.begin(), f.train.end(), f.val.begin(), f.val.end(), std::back_inserter(overlap));
        CHECK(overlap.empty());
        seen.insert(f.val.begin(), f.val.end());
    }
    // every training index validates exactly once
    CHECK(seen.size() == plan.train.size());
    CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == plan.train.size());
    for (std::size_t i : plan.test) CHECK(seen.count(i) == 0);

    // per-class sizes come out as 75/74, 36/35 and 23/22
    std::multiset<std::size_t> b, m, n;
    for (const auto& f : folds) {
        const auto v = ds.counts_of(f.val);
        b.insert(v[0]);
        m.insert(v[1]);
        n.insert(v[2]);
    }
    CHECK(b == std::multiset<std::size_t>{74, 74, 74, 74, 75});
    CHECK(m == std::multiset<std::size_t>{35, 36, 36, 36, 36});
    CHECK(n == std::multiset<std::size_t>{22, 22, 23, 23, 23});
}

TEST_CASE("split and k-fold errors") {
    auto tiny = labels_only({5, 1, 5});
    CHECK_THROWS_AS(stratified_split(tiny, 0.15, 1), DataError);
    auto ds = labels_only({10, 10, 3});
    CHECK_THROWS_AS(stratified_split(ds, 1.0, 1), ConfigError);
    std::vector<std::size_t> all(ds.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    CHECK_THROWS_AS(stratified_kfold(ds, all, 1, 1), ConfigError);
    CHECK_THROWS_AS(stratified_kfold(ds, all, 5, 1), DataError);
}

TEST_CASE("synthetic generator") {
    auto a = generate_synthetic({6, 4, 3}, 32, 5);
    auto b = generate_synthetic({6, 4, 3}, 32, 5);
    REQUIRE(a.size() == 13);
    CHECK(a.class_counts == std::array<std::size_t, 3>{6, 4, 3});
    CHECK(a.items[0].id == "benign/benign_0000");
    CHECK(a.items[12].id == "normal/normal_0002");
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.items[i].image.pixels == b.items[i].image.pixels);
        CHECK(a.items[i].image.width == 32);
        for (double v : a.items[i].image.pixels) {
            CHECK(v == std::round(v));
            CHECK(v >= 0.0);
            CHECK(v <= 255.0);
        }
    }
    auto c = generate_synthetic({6, 4, 3}, 32, 6);
    CHECK(c.items[0].image.pixels != a.items[0].image.pixels);

    CHECK_THROWS_AS(generate_synthetic({1, 1, 1}, 40, 1), ConfigError);
    CHECK_THROWS_AS(generate_synthetic({1, 0, 1}, 32, 1), ConfigError);
}

TEST_CASE("synthetic lesions carry more boundary energy than plain tissue") {
    auto ds = generate_synthetic({40, 40, 40}, 64, 8);
    std::array<double, 3> energy{};
    for (const auto& s : ds.items) energy[s.label] += sobel(s.image).raw_energy() / 40.0;
    CHECK(energy[0] > energy[2]);
    CHECK(energy[1] > energy[2]);
}

TEST_CASE("write_dataset and load_dataset round trip") {
    const auto root = scratch("roundtrip");
    auto ds = generate_synthetic({3, 2, 2}, 16, 9);
    write_dataset(root, ds);
    CHECK(fs::exists(root / "manifest.csv"));
    CHECK(fs::exists(root / "malignant" / "malignant_0001.pgm"));
    auto back = load_dataset(root);
    REQUIRE(back.size() == ds.size());
    CHECK(back.class_counts == ds.class_counts);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(back.items[i].id == ds.items[i].id);
        CHECK(back.items[i].label == ds.items[i].label);
        CHECK(back.items[i].image.pixels == ds.items[i].image.pixels);
    }
    std::ifstream manifest(root / "manifest.csv");
    std::string header, first;
    std::getline(manifest, header);
    std::getline(manifest, first);
    CHECK(header == "id,relative_path,label");
    CHECK(first == "benign/benign_0000,benign/benign_0000.pgm,0");
    fs::remove_all(root);
}

TEST_CASE("load_dataset: masks and hidden files are skipped, order is by name") {
    const auto root = scratch("busi");
    for (const char* cls : kClassNames) fs::create_directories(root / cls);
    Image img(8, 8, 10.0);
    write_pgm(root / "benign" / "benign (2).pgm", img);
    write_pgm(root / "benign" / "benign (1).pgm", img);
    write_pgm(root / "benign" / "benign (1)_mask.pgm", img);
    write_pgm(root / "benign" / ".hidden.pgm", img);
    write_pgm(root / "malignant" / "m.pgm", img);
    write_pgm(root / "normal" / "n.pgm", img);
    auto ds = load_dataset(root);
    REQUIRE(ds.size() == 4);
    CHECK(ds.items[0].id == "benign/benign (1)");
    CHECK(ds.items[1].id == "benign/benign (2)");
    CHECK(ds.class_counts == std::array<std::size_t, 3>{2, 1, 1});

    fs::remove(root / "normal" / "n.pgm");
    CHECK_THROWS_AS(load_dataset(root), DataError);
    fs::remove_all(root / "normal");
    CHECK_THROWS_AS(load_dataset(root), DataError);
    CHECK_THROWS_AS(load_dataset(root / "nowhere"), DataError);
    fs::remove_all(root);
}

TEST_CASE("image files") {
    const auto root = scratch("pgm");
    Image img(5, 3);
    for (int i = 0; i < 15; ++i) img.pixels[i] = i * 17.2;
    write_pgm(root / "a.pgm", img);
    Image back = read_image(root / "a.pgm");
    CHECK(back.width == 5);
    CHECK(back.height == 3);
    for (int i = 0; i < 15; ++i) CHECK(back.pixels[i] == std::round(i * 17.2));

    std::ofstream(root / "ascii.pgm") << "P2\n# comment\n2 2\n255\n0 10\n200 255\n";
    Image p2 = read_image(root / "ascii.pgm");
    CHECK(p2.pixels == std::vector<double>{0, 10, 200, 255});

    std::ofstream(root / "bad.pgm") << "P7\n";
    CHECK_THROWS_AS(read_image(root / "bad.pgm"), DataError);
    fs::remove_all(root);
}

TEST_CASE("subset keeps ids and recounts") {
    auto ds = labels_only({3, 3, 3});
    const std::vector<std::size_t> idx{0, 4, 8, 7};
    auto sub = ds.subset(idx);
    CHECK(sub.size() == 4);
    CHECK(sub.items[1].id == ds.items[4].id);
    CHECK(sub.class_counts == std::array<std::size_t, 3>{1, 1, 2});
}

}  // TEST_SUITE
