// Acceptance suite: one PASS/FAIL line per criterion.
//
//   hads_acceptance [--only N] [--cli PATH] [--workdir DIR]
//
// Exit status is 0 only if every selected criterion passes.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hads/augment.hpp"
#include "hads/data.hpp"
#include "hads/loss_opt.hpp"
#include "hads/metrics.hpp"
#include "hads/model.hpp"
#include "hads/trainer.hpp"

using namespace hads;
namespace fs = std::filesystem;

namespace {

// ---- pinned tolerances -------------------------------------------------------

constexpr double kGradTol = 1e-4;
constexpr std::size_t kGradCoords = 24;  // sampled coordinates per parameter tensor
constexpr double kScheduleMidTol = 1e-18;
constexpr double kFocalTol = 1e-12;
constexpr double kAlphaTol = 5e-5;
constexpr double kSpeckleRelTol = 0.05;
constexpr double kGainTol = 1e-9;
constexpr double kSelectLo = 0.323, kSelectHi = 0.343;
constexpr double kRandomAucLo = 0.45, kRandomAucHi = 0.55;
// End-to-end learning on synthetic data. Seeds 11, 12, 13 gave held-out
// accuracy 0.975 / 1.0 / 1.0 and macro AUC 0.998 / 1.0 / 1.0; the edge-stream
// ablation dropped F1 over classes 0 and 1 from >= 0.98 to 0.52 / 0.24 / 0.57.
constexpr double kE2eAccuracyMin = 0.95;
constexpr double kE2eAucMin = 0.99;
constexpr std::uint64_t kE2eSeed = 11;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = uniform(rng, lo, hi);
    return Tensor(shape, std::move(v));
}

double log_softmax_at(std::span<const double> z, int y) {
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    return z[y] - m - std::log(s);
}

// ---- criteria ------------------------------------------------------------------

Outcome ac1_metrics_table() {
    std::vector<int> truth, pred;
    const int cm[3][3] = {{64, 1, 1}, {2, 29, 0}, {0, 0, 20}};
    for (int t = 0; t < 3; ++t)
        for (int p = 0; p < 3; ++p)
            for (int i = 0; i < cm[t][p]; ++i) {
                truth.push_back(t);
                pred.push_back(p);
            }
    const auto c = confusion(truth, pred);
    const auto m = per_class_prf(c);
    const std::vector<double> f1{m[0].f1, m[1].f1, m[2].f1};
    const std::string acc = fmt("%.2f", 100.0 * accuracy(c));
    const std::string f0 = fmt("%.3f", f1[0]), f1s = fmt("%.3f", f1[1]), f2 = fmt("%.3f", f1[2]);
    const std::string macro = fmt("%.4f", macro_average(f1));
    const bool ok = acc == "96.58" && f0 == "0.970" && f1s == "0.951" && f2 == "0.976" && macro == "0.9654";
    return {ok, "accuracy " + acc + "% F1 " + f0 + "/" + f1s + "/" + f2 + " macro F1 " + macro};
}

Outcome ac2_gradients() {
    const ModelConfig cfg = ModelConfig::desk(32, 64);
    HadsNetModel model(cfg);
    Rng init(5);
    init_parameters(model, init);

    auto ds = generate_synthetic({2, 1, 1}, 32, 6);
    const AugConfig aug = AugConfig::for_size(32);
    std::vector<ModelInput> inputs;
    std::vector<int> labels;
    Rng prep(8);
    for (const auto& s : ds.items) {
        inputs.push_back(prepare_input(s.image, cfg, Mode::Train, aug, prep));
        labels.push_back(s.label);
    }
    const ClassWeights w = class_weights(std::vector<std::size_t>{2, 1, 1});
    auto loss = [&] {
        Rng dropout(77);  // same mask on every evaluation
        return focal_loss(forward_batch(model, inputs, Mode::Train, dropout), labels, w, 2.0);
    };

    double worst = 0.0;
    std::string worst_name, failing;
    std::size_t checked = 0;
    std::uint64_t seed = 1;
    for (const auto& p : model.parameters()) {
        const double e = grad_check(loss, p.tensor, 1e-5, kGradCoords, seed);
        ++checked;
        if (e > worst || worst_name.empty()) {
            worst = std::max(worst, e);
            worst_name = p.name;
        }
        if (e >= kGradTol) {
            // Diagnostic only: the same coordinates at a step too small to cross
            // a ReLU or max-pool switch separate a kink from a wrong gradient.
            const double fine = grad_check(loss, p.tensor, 1e-6, kGradCoords, seed);
            failing += "; " + p.name + " " + fmt("%.3g", e) + " (h=1e-6: " + fmt("%.3g", fine) + ")";
        }
        ++seed;
    }
    return {worst < kGradTol, std::to_string(checked) + " tensors at h=1e-5, worst rel err " + fmt("%.3g", worst) +
                                  " (" + worst_name + ")" + failing};
}

Outcome ac3_schedule() {
    ScheduleConfig cfg;
    const double a = cosine_lr(0, cfg), b = cosine_lr(50, cfg), c = cosine_lr(25, cfg);
    const bool ok = a == 1e-4 && b == 1e-6 && std::abs(c - 5.05e-5) <= kScheduleMidTol;
    return {ok, "lr(0)=" + fmt("%.17g", a) + " lr(50)=" + fmt("%.17g", b) + " lr(25)=" + fmt("%.17g", c)};
}

Outcome ac4_focal() {
    const ClassWeights ones{{1.0, 1.0, 1.0}};
    Rng rng(1);
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t B = 1 + rng() % 6;
        auto logits = random_tensor({B, 3}, 100 + t, -8.0, 8.0);
        std::vector<int> y(B);
        for (auto& v : y) v = static_cast<int>(rng() % 3);
        double ce = 0.0;
        for (std::size_t b = 0; b < B; ++b) ce -= log_softmax_at(logits.data().subspan(b * 3, 3), y[b]);
        ce /= static_cast<double>(B);
        worst = std::max(worst, std::abs(focal_loss(logits, y, ones, 0.0).item() - ce));
    }
    Tensor half({1, 3}, {std::log(2.0), 0.0, 0.0});
    const double v = focal_loss(half, std::vector<int>{0}, ones, 2.0).item();
    const double err = std::abs(v - 0.25 * std::numbers::ln2);
    return {worst < kFocalTol && err < kFocalTol,
            "max |FL-CE| " + fmt("%.3g", worst) + ", |FL(p=.5)-ln2/4| " + fmt("%.3g", err)};
}

Outcome ac5_class_weights() {
    const std::vector<std::size_t> counts{371, 179, 113};
    const auto w = class_weights(counts);
    const double want[3] = {0.5957, 1.2346, 1.9558};
    double worst = 0.0, weighted = 0.0;
    for (int c = 0; c < 3; ++c) {
        worst = std::max(worst, std::abs(w.alpha[c] - want[c]));
        weighted += static_cast<double>(counts[c]) * w.alpha[c];
    }
    const double mean = weighted / 663.0;
    // one rounding step per term of the weighted sum
    const bool ok = worst < kAlphaTol && std::abs(mean - 1.0) <= 4 * std::numeric_limits<double>::epsilon();
    return {ok, "alpha " + fmt("%.4f", w.alpha[0]) + "/" + fmt("%.4f", w.alpha[1]) + "/" + fmt("%.4f", w.alpha[2]) +
                    ", weighted mean " + fmt("%.17g", mean)};
}

Outcome ac6_augmentation() {
    Image gray(224, 224, 127.5);
    Rng rng(1);
    Image sp = speckle_unclamped(gray, 0.05, rng);
    double s = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < sp.pixels.size(); ++i) {
        const double d = sp.pixels[i] - gray.pixels[i];
        s += d;
        ss += d * d;
    }
    const double n = static_cast<double>(sp.pixels.size());
    const double sd = std::sqrt(ss / n - (s / n) * (s / n));
    const bool speckle_ok = std::abs(sd - 12.75) / 12.75 < kSpeckleRelTol;

    const int width = shadow_width(224);

    const int H = 224;
    Image flat(8, H, 100.0);
    Image g = apply_gain(flat, 0.7, 1.2, false);
    const double g0 = g.at(0, 0) / 100.0;
    const double slope = (g.at(0, H - 1) - g.at(0, 0)) / 100.0 / (H - 1);
    bool affine = true;
    for (int y = 0; y < H; ++y) affine = affine && std::abs(g.at(0, y) / 100.0 - (g0 + slope * y)) < kGainTol;
    const bool gain_ok = affine && std::abs(g0 - 0.7) < kGainTol && std::abs(g0 + slope * H - 1.2) < kGainTol;

    AugConfig cfg;
    Rng sel(2024);
    std::array<int, 4> counts{};
    Image small(8, 8, 100.0);
    for (int i = 0; i < 30000; ++i) {
        PhysicsDraw d;
        apply_physics(small, cfg, sel, &d);
        ++counts[static_cast<int>(d.kind)];
    }
    bool sel_ok = counts[0] == 0;
    std::string freq;
    for (int k = 1; k <= 3; ++k) {
        const double f = counts[k] / 30000.0;
        sel_ok = sel_ok && f >= kSelectLo && f <= kSelectHi;
        freq += (k > 1 ? "/" : "") + fmt("%.4f", f);
    }
    return {speckle_ok && width == 33 && gain_ok && sel_ok,
            "speckle sd " + fmt("%.3f", sd) + " shadow width " + std::to_string(width) + " gain affine " +
                (gain_ok ? "yes" : "no") + " selection " + freq};
}

Outcome ac7_attention() {
    HadsNetModel m(ModelConfig::desk(32, 64));
    Rng init(4);
    init_parameters(m, init);
    bool weights_one = true, invariant = true;
    for (std::uint64_t s = 0; s < 20; ++s) {
        auto t = relu(random_tensor({3, 512}, 10 + s, -2.0, 2.0));
        auto e = relu(random_tensor({3, 512}, 40 + s, -2.0, 2.0));
        auto base = cross_attention_fuse(t, e, m.fusion);
        for (double w : base.attention.data()) weights_one = weights_one && w == 1.0;

        const auto q_saved = std::vector<double>(m.fusion.w_q.data().begin(), m.fusion.w_q.data().end());
        const auto k_saved = std::vector<double>(m.fusion.w_k.data().begin(), m.fusion.w_k.data().end());
        Rng noise(100 + s);
        for (auto& v : m.fusion.w_q.mutable_data()) v += uniform(noise, -3.0, 3.0);
        for (auto& v : m.fusion.w_k.mutable_data()) v *= uniform(noise, -5.0, 5.0);
        auto moved = cross_attention_fuse(t, e, m.fusion);
        const auto a = base.fused.data(), b = moved.fused.data();
        invariant = invariant && std::equal(a.begin(), a.end(), b.begin(), b.end());
        std::copy(q_saved.begin(), q_saved.end(), m.fusion.w_q.mutable_data().begin());
        std::copy(k_saved.begin(), k_saved.end(), m.fusion.w_k.mutable_data().begin());
    }
    return {weights_one && invariant, std::string("weights all 1.0: ") + (weights_one ? "yes" : "no") +
                                          ", output bit-invariant to W_Q/W_K: " + (invariant ? "yes" : "no")};
}

Outcome ac8_auc() {
    Rng rng(17);
    int mismatches = 0;
    for (int inst = 0; inst < 200; ++inst) {
        const std::size_t n = 10 + rng() % 491;
        std::vector<int> truth(n);
        std::vector<double> scores(n * 3);
        for (std::size_t i = 0; i < n; ++i) {
            truth[i] = static_cast<int>(rng() % 3);
            for (int c = 0; c < 3; ++c) scores[i * 3 + c] = static_cast<double>(rng() % 20) / 20.0;
        }
        truth[0] = 0;
        truth[1] = 1;
        truth[2] = 2;
        const auto r = roc_auc_ovr(scores, truth);
        for (int c = 0; c < 3; ++c) {
            double num = 0.0;
            long pairs = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (truth[i] != c) continue;
                for (std::size_t j = 0; j < n; ++j) {
                    if (truth[j] == c) continue;
                    ++pairs;
                    const double si = scores[i * 3 + c], sj = scores[j * 3 + c];
                    if (si > sj) num += 1.0;
                    else if (si == sj) num += 0.5;
                }
            }
            if (r.per_class[c] != num / static_cast<double>(pairs)) ++mismatches;
        }
    }
    Rng rr(18);
    const std::size_t n = 2000;
    std::vector<int> truth(n);
    std::vector<double> scores(n * 3);
    for (std::size_t i = 0; i < n; ++i) {
        truth[i] = static_cast<int>(rr() % 3);
        for (int c = 0; c < 3; ++c) scores[i * 3 + c] = uniform(rr, 0.0, 1.0);
    }
    const double macro = roc_auc_ovr(scores, truth).macro;
    return {mismatches == 0 && macro >= kRandomAucLo && macro <= kRandomAucHi,
            std::to_string(mismatches) + " mismatches over 600 class curves, random macro AUC " + fmt("%.4f", macro)};
}

Outcome ac9_split() {
    LabeledDataset ds;
    const std::size_t counts[3] = {437, 210, 133};
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < counts[c]; ++i) ds.items.push_back(Sample{Image(8, 8), c, std::string(kClassNames[c]) + "/" + std::to_string(i)});
    ds.validate();
    const auto plan = stratified_split(ds, 0.15, 42);
    const auto test = ds.counts_of(plan.test);
    const auto train = ds.counts_of(plan.train);
    const auto folds = stratified_kfold(ds, plan.train, 5, 42);
    double worst = 0.0;
    for (const auto& f : folds) {
        const auto v = ds.counts_of(f.val);
        for (int c = 0; c < 3; ++c)
            worst = std::max(worst, std::abs(static_cast<double>(v[c]) - static_cast<double>(train[c]) / 5.0));
    }
    const bool ok = test[0] == 66 && test[1] == 31 && test[2] == 20 && worst <= 1.0;
    return {ok, "test " + std::to_string(test[0]) + "/" + std::to_string(test[1]) + "/" + std::to_string(test[2]) +
                    ", worst fold deviation " + fmt("%.1f", worst)};
}

Outcome ac10_end_to_end(const fs::path& work) {
    const auto start = std::chrono::steady_clock::now();
    TrainConfig cfg = TrainConfig::desk();
    cfg.seed = kE2eSeed;
    cfg.test_frac = 1.0 / 6.0;
    auto ds = generate_synthetic({402, 198, 120}, 64, kE2eSeed);
    const fs::path out = work / "ac10";
    fs::remove_all(out);
    auto run = run_training(ds, cfg, out, "synthetic");

    const auto& rep = run.test.report;
    const LabeledDataset sized = resize_dataset(ds, cfg.model.image_size);
    auto ck = load_checkpoint(out / "global_best.ckpt");
    ForwardOptions ablate;
    ablate.zero_edge_stream = true;
    const auto abl = evaluate(ck.model, sized, run.split.test, ablate);
    const double full_pair = 0.5 * (rep.classes[0].f1 + rep.classes[1].f1);
    const double abl_pair = 0.5 * (abl.report.classes[0].f1 + abl.report.classes[1].f1);
    const double minutes =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;

    const bool ok = cfg.epochs <= 15 && run.split.train.size() == 600 && run.split.test.size() == 120 &&
                    rep.accuracy >= kE2eAccuracyMin && rep.auc.macro >= kE2eAucMin && abl_pair < full_pair;
    return {ok, "best fold " + std::to_string(run.cv.global_best.fold) + ", test accuracy " +
                    fmt("%.4f", rep.accuracy) + " macro AUC " + fmt("%.4f", rep.auc.macro) + ", F1(0,1) full " +
                    fmt("%.4f", full_pair) + " vs edge stream zeroed " + fmt("%.4f", abl_pair) + ", " +
                    fmt("%.1f", minutes) + " min"};
}

int shell(const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome ac11_determinism(const fs::path& work, const std::string& cli) {
    if (cli.empty()) return {false, "no CLI path given (--cli)"};
    const fs::path dir = work / "ac11";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string cd = "cd '" + dir.string() + "' && '" + cli + "' ";
    if (shell(cd + "generate-data --out data --counts 12,8,8 --size 32 --seed 21 > /dev/null") != 0)
        return {false, "generate-data failed"};
    const std::string sets =
        " --set image_size=32 --set texture_dim=32 --set epochs=2 --set folds=2 --set batch_size=4 --set seed=9"
        " --set test_frac=0.2 --quiet > /dev/null";
    for (const char* run : {"a", "b"})
        if (shell(cd + "train --data data --out " + run + sets) != 0) return {false, "train failed"};

    std::size_t compared = 0;
    std::vector<std::string> differing;
    for (const auto& entry : fs::directory_iterator(dir / "a")) {
        const auto name = entry.path().filename().string();
        std::string a = slurp(entry.path()), b = slurp(dir / "b" / name);
        if (name == "run_manifest.json") {
            // wall-clock stamps are the only fields allowed to differ
            auto ja = nlohmann::ordered_json::parse(a), jb = nlohmann::ordered_json::parse(b);
            for (auto* j : {&ja, &jb}) {
                j->erase("started_at");
                j->erase("finished_at");
            }
            a = ja.dump();
            b = jb.dump();
        }
        ++compared;
        if (a != b || a.empty()) differing.push_back(name);
    }
    std::string detail = std::to_string(compared) + " files compared";
    for (const auto& d : differing) detail += ", differs: " + d;
    return {differing.empty() && compared >= 8, detail};
}

Outcome ac12_global_best() {
    const double losses[5] = {0.0693, 0.1224, 0.0784, 0.1510, 0.1163};
    std::vector<CheckpointRecord> recs;
    for (int k = 0; k < 5; ++k) recs.push_back({k + 1, 0, losses[k], {}});
    const auto best = select_global_best(recs);
    return {best.fold == 1, "selected fold " + std::to_string(best.fold)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    int only = 0;
    std::string cli;
    std::string workdir = (fs::temp_directory_path() / "hads_acceptance").string();
    app.add_option("--only", only, "Run a single criterion (1-12)")->check(CLI::Range(0, 12));
    app.add_option("--cli", cli, "Path to the hadsnet executable (criterion 11)");
    app.add_option("--workdir", workdir, "Scratch directory");
    CLI11_PARSE(app, argc, argv);
    tune_allocator();
    const fs::path work = workdir;
    fs::create_directories(work);
    if (!cli.empty()) cli = fs::absolute(cli).string();

    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"metrics table", ac1_metrics_table},
        {"gradient integrity", ac2_gradients},
        {"schedule exactness", ac3_schedule},
        {"focal-loss reductions", ac4_focal},
        {"class-weight formula", ac5_class_weights},
        {"augmentation statistics", ac6_augmentation},
        {"attention degeneracy", ac7_attention},
        {"AUC oracle equivalence", ac8_auc},
        {"split fidelity", ac9_split},
        {"end-to-end learning", [&] { return ac10_end_to_end(work); }},
        {"determinism", [&] { return ac11_determinism(work, cli); }},
        {"checkpoint selection", ac12_global_best},
    };

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (only != 0 && id != only) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::printf("AC%-2d %s  %s: %s\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first, o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
