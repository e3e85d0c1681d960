#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "hads/augment.hpp"
#include "hads/data.hpp"
#include "hads/edge.hpp"
#include "hads/errors.hpp"
#include "hads/loss_opt.hpp"
#include "hads/metrics.hpp"
#include "hads/model.hpp"
#include "hads/trainer.hpp"

namespace py = pybind11;
using namespace hads;

namespace {

// Images cross the boundary as (height, width, row-major pixel list).
Image to_image(int height, int width, const std::vector<double>& pixels) {
    if (height <= 0 || width <= 0 || pixels.size() != static_cast<std::size_t>(height) * width)
        throw DimensionError("image: pixel count does not match height x width");
    Image img(width, height);
    img.pixels = pixels;
    return img;
}

py::dict report_dict(const EvalReport& r) {
    py::list classes;
    for (const auto& c : r.classes)
        classes.append(py::dict(py::arg("precision") = c.precision, py::arg("recall") = c.recall, py::arg("f1") = c.f1,
                                py::arg("support") = c.support));
    return py::dict(py::arg("accuracy") = r.accuracy, py::arg("macro_f1") = r.macro_f1,
                    py::arg("macro_auc") = r.auc.macro, py::arg("auc") = r.auc.per_class, py::arg("classes") = classes,
                    py::arg("confusion") = r.confusion.cells, py::arg("text") = render_report(r));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Dual-stream ultrasound classifier core";

    auto base = py::register_exception<Error>(m, "HadsError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<DataError>(m, "DataError", base.ptr());
    py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
    py::register_exception<NumericError>(m, "NumericError", base.ptr());
    py::register_exception<StateError>(m, "StateError", base.ptr());

    m.attr("CLASS_NAMES") = py::make_tuple(kClassNames[0], kClassNames[1], kClassNames[2]);

    m.def(
        "class_weights",
        [](const std::vector<std::size_t>& counts) { return class_weights(counts).alpha; }, py::arg("counts"));

    m.def(
        "cosine_lr",
        [](int t, double lr_max, double lr_min, int t_max) {
            ScheduleConfig cfg;
            cfg.eta_max = lr_max;
            cfg.eta_min = lr_min;
            cfg.t_max = t_max;
            return cosine_lr(t, cfg);
        },
        py::arg("t"), py::arg("lr_max") = 1e-4, py::arg("lr_min") = 1e-6, py::arg("t_max") = 50);

    m.def(
        "focal_loss",
        [](const std::vector<std::vector<double>>& logits, const std::vector<int>& labels,
           const std::vector<double>& alpha, double gamma) {
            std::vector<double> flat;
            for (const auto& row : logits) {
                if (row.size() != 3) throw DimensionError("focal_loss: logits rows must have 3 entries");
                flat.insert(flat.end(), row.begin(), row.end());
            }
            Tensor z({logits.size(), 3}, std::move(flat));
            return focal_loss(z, labels, ClassWeights{alpha}, gamma).item();
        },
        py::arg("logits"), py::arg("labels"), py::arg("alpha") = std::vector<double>{1.0, 1.0, 1.0},
        py::arg("gamma") = 2.0);

    m.def(
        "sobel",
        [](int height, int width, const std::vector<double>& pixels) {
            const auto e = sobel(to_image(height, width, pixels));
            return py::make_tuple(e.magnitudes, e.scale);
        },
        py::arg("height"), py::arg("width"), py::arg("pixels"),
        "Returns (normalized magnitude, row-major; peak scale).");

    m.def(
        "speckle",
        [](int height, int width, const std::vector<double>& pixels, double sigma_s, std::uint64_t seed) {
            Rng rng(seed);
            return speckle(to_image(height, width, pixels), sigma_s, rng).pixels;
        },
        py::arg("height"), py::arg("width"), py::arg("pixels"), py::arg("sigma_s"), py::arg("seed"));
    m.def(
        "apply_shadow",
        [](int height, int width, const std::vector<double>& pixels, int x0, int band, double alpha) {
            return apply_shadow(to_image(height, width, pixels), x0, band, alpha).pixels;
        },
        py::arg("height"), py::arg("width"), py::arg("pixels"), py::arg("x0"), py::arg("band_width"),
        py::arg("alpha"));
    m.def("shadow_width", [](int w) { return shadow_width(w); }, py::arg("image_width"));
    m.def(
        "apply_gain",
        [](int height, int width, const std::vector<double>& pixels, double g_min, double g_max, bool clamp) {
            return apply_gain(to_image(height, width, pixels), g_min, g_max, clamp).pixels;
        },
        py::arg("height"), py::arg("width"), py::arg("pixels"), py::arg("g_min"), py::arg("g_max"),
        py::arg("clamp") = true);
    m.def(
        "resize",
        [](int height, int width, const std::vector<double>& pixels, int side) {
            return resize(to_image(height, width, pixels), side).pixels;
        },
        py::arg("height"), py::arg("width"), py::arg("pixels"), py::arg("side"));

    m.def(
        "confusion",
        [](const std::vector<int>& truth, const std::vector<int>& pred) {
            const auto cm = confusion(truth, pred);
            std::vector<std::vector<std::size_t>> rows(3, std::vector<std::size_t>(3));
            for (std::size_t t = 0; t < 3; ++t)
                for (std::size_t p = 0; p < 3; ++p) rows[t][p] = cm.at(t, p);
            return rows;
        },
        py::arg("truth"), py::arg("pred"));
    m.def(
        "roc_auc_ovr",
        [](const std::vector<std::vector<double>>& scores, const std::vector<int>& truth) {
            std::vector<double> flat;
            for (const auto& row : scores) flat.insert(flat.end(), row.begin(), row.end());
            const auto r = roc_auc_ovr(flat, truth);
            return py::make_tuple(r.per_class, r.macro);
        },
        py::arg("scores"), py::arg("truth"), "Returns (per-class AUC, macro AUC).");
    m.def(
        "classification_report",
        [](const std::vector<int>& truth, const std::vector<int>& pred, const std::vector<std::vector<double>>& scores) {
            std::vector<double> flat;
            for (const auto& row : scores) flat.insert(flat.end(), row.begin(), row.end());
            return report_dict(classification_report(truth, pred, flat));
        },
        py::arg("truth"), py::arg("pred"), py::arg("scores"));

    m.def(
        "generate_synthetic",
        [](const std::array<std::size_t, 3>& counts, int side, std::uint64_t seed) {
            const auto ds = generate_synthetic(counts, side, seed);
            py::list out;
            for (const auto& s : ds.items)
                out.append(py::dict(py::arg("id") = s.id, py::arg("label") = s.label,
                                    py::arg("pixels") = s.image.pixels));
            return out;
        },
        py::arg("counts"), py::arg("side"), py::arg("seed"));
    m.def(
        "write_synthetic",
        [](const std::filesystem::path& root, const std::array<std::size_t, 3>& counts, int side,
           std::uint64_t seed) { write_dataset(root, generate_synthetic(counts, side, seed)); },
        py::arg("root"), py::arg("counts"), py::arg("side"), py::arg("seed"));

    m.def(
        "stratified_split",
        [](const std::vector<int>& labels, double test_frac, std::uint64_t seed) {
            LabeledDataset ds;
            for (std::size_t i = 0; i < labels.size(); ++i)
                ds.items.push_back(Sample{Image(8, 8), labels[i], std::to_string(i)});
            ds.validate();
            const auto plan = stratified_split(ds, test_frac, seed);
            return py::make_tuple(plan.train, plan.test);
        },
        py::arg("labels"), py::arg("test_frac") = 0.15, py::arg("seed") = 42, "Returns (train, test) indices.");
    m.def(
        "stratified_kfold",
        [](const std::vector<int>& labels, const std::vector<std::size_t>& train, int k, std::uint64_t seed) {
            LabeledDataset ds;
            for (std::size_t i = 0; i < labels.size(); ++i)
                ds.items.push_back(Sample{Image(8, 8), labels[i], std::to_string(i)});
            ds.validate();
            py::list out;
            for (const auto& f : stratified_kfold(ds, train, k, seed)) out.append(py::make_tuple(f.train, f.val));
            return out;
        },
        py::arg("labels"), py::arg("train"), py::arg("k") = 5, py::arg("seed") = 42,
        "Returns a list of (train, validation) index lists.");

    m.def(
        "select_global_best",
        [](const std::vector<double>& fold_losses) {
            std::vector<CheckpointRecord> recs;
            for (std::size_t k = 0; k < fold_losses.size(); ++k)
                recs.push_back({static_cast<int>(k) + 1, 0, fold_losses[k], {}});
            return select_global_best(recs).fold;
        },
        py::arg("fold_losses"), "1-based fold with the lowest validation loss.");

    m.def(
        "expected_parameter_count",
        [](int image_size, std::size_t texture_dim) {
            return expected_parameter_count(ModelConfig::desk(image_size, texture_dim));
        },
        py::arg("image_size") = 64, py::arg("texture_dim") = 256);

    m.def(
        "infer",
        [](const std::filesystem::path& checkpoint, const std::filesystem::path& image) {
            const auto r = infer(checkpoint, image);
            return py::make_tuple(r.class_name, r.probs);
        },
        py::arg("checkpoint"), py::arg("image"), "Returns (class name, probabilities).");

    m.def(
        "train",
        [](const std::filesystem::path& data, const std::filesystem::path& out,
           const std::map<std::string, std::string>& overrides) {
            TrainConfig cfg = TrainConfig::desk();
            for (const auto& [k, v] : overrides) cfg.set(k, v);
            cfg.validate();
            const auto summary = [&] {
                py::gil_scoped_release release;
                return run_training(load_dataset(data), cfg, out, data.string());
            }();
            return report_dict(summary.test.report);
        },
        py::arg("data"), py::arg("out"), py::arg("overrides") = std::map<std::string, std::string>{},
        "Desk-profile training run; returns the held-out report.");
}
