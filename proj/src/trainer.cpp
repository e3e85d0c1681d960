#include "hads/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "hads/errors.hpp"

namespace hads {

namespace fs = std::filesystem;

// ---- configuration -----------------------------------------------------------

TrainConfig TrainConfig::desk() {
    TrainConfig cfg;
    cfg.model = ModelConfig::desk(64, 256);
    cfg.epochs = 5;
    cfg.lr_max = 1e-3;
    cfg.lr_min = 1e-5;
    return cfg;
}

ScheduleConfig TrainConfig::schedule() const {
    ScheduleConfig s;
    s.eta_max = lr_max;
    s.eta_min = lr_min;
    s.t_max = t_max == 0 ? epochs : t_max;
    return s;
}

AugConfig TrainConfig::augment() const {
    AugConfig a = aug_base;
    a.elastic_alpha_px = aug_base.elastic_alpha_px * model.image_size / 224.0;
    a.elastic_sigma_px = aug_base.elastic_sigma_px * model.image_size / 224.0;
    return a;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("config: epochs must be at least 1");
    if (t_max != 0 && t_max != epochs)
        throw ConfigError("config: t_max (" + std::to_string(t_max) + ") must equal epochs (" + std::to_string(epochs) + ")");
    if (batch_size < 2) throw ConfigError("config: batch_size must be at least 2 (batch normalization)");
    if (folds < 2) throw ConfigError("config: folds must be at least 2");
    if (!(gamma >= 0.0)) throw ConfigError("config: gamma must be nonnegative");
    if (!(clip_norm > 0.0)) throw ConfigError("config: clip_norm must be positive");
    if (!(test_frac >= 0.0 && test_frac < 1.0)) throw ConfigError("config: test_frac must lie in [0, 1)");
    schedule().validate();
    model.validate();
    augment().validate();
    AdamW probe({}, optim);  // validates the optimizer hyperparameters
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* first = text.data();
    const char* last = first + text.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last || text.empty())
        throw ConfigError("config: cannot parse value '" + text + "' for key " + key);
    return value;
}

struct KeySpec {
    const char* key;
    std::function<std::string(const TrainConfig&)> get;
    std::function<void(TrainConfig&, const std::string&)> set;
};

#define HADS_INT_KEY(name, member)                                                                  \
    KeySpec {                                                                                       \
        name, [](const TrainConfig& c) { return std::to_string(c.member); },                        \
            [](TrainConfig& c, const std::string& v) { c.member = parse_number<decltype(c.member)>(name, v); } \
    }
#define HADS_REAL_KEY(name, member)                                                                   \
    KeySpec {                                                                                         \
        name, [](const TrainConfig& c) { return fmt(c.member); },                                     \
            [](TrainConfig& c, const std::string& v) { c.member = parse_number<double>(name, v); }    \
    }

const std::vector<KeySpec>& key_table() {
    static const std::vector<KeySpec> table = {
        HADS_INT_KEY("epochs", epochs),
        HADS_INT_KEY("batch_size", batch_size),
        HADS_INT_KEY("seed", seed),
        HADS_INT_KEY("folds", folds),
        HADS_REAL_KEY("gamma", gamma),
        HADS_REAL_KEY("clip_norm", clip_norm),
        HADS_REAL_KEY("test_frac", test_frac),
        HADS_INT_KEY("t_max", t_max),
        HADS_REAL_KEY("lr_max", lr_max),
        HADS_REAL_KEY("lr_min", lr_min),
        HADS_REAL_KEY("beta1", optim.beta1),
        HADS_REAL_KEY("beta2", optim.beta2),
        HADS_REAL_KEY("eps", optim.eps),
        HADS_REAL_KEY("weight_decay", optim.weight_decay),
        HADS_INT_KEY("image_size", model.image_size),
        HADS_INT_KEY("texture_dim", model.texture_dim),
        KeySpec{"backbone_channels",
                [](const TrainConfig& c) {
                    std::string s;
                    for (std::size_t i = 0; i < 4; ++i) s += (i ? "," : "") + std::to_string(c.model.backbone_channels[i]);
                    return s;
                },
                [](TrainConfig& c, const std::string& v) {
                    std::stringstream ss(v);
                    std::string tok;
                    std::size_t i = 0;
                    while (std::getline(ss, tok, ',')) {
                        if (i == 4) throw ConfigError("config: backbone_channels takes exactly 4 widths");
                        c.model.backbone_channels[i++] = parse_number<std::size_t>("backbone_channels", tok);
                    }
                    if (i != 4) throw ConfigError("config: backbone_channels takes exactly 4 widths");
                }},
        HADS_REAL_KEY("dropout_fused", model.dropout_fused),
        HADS_REAL_KEY("dropout_hidden", model.dropout_hidden),
        HADS_REAL_KEY("aug.speckle_sigma_min", aug_base.sigma_s.lo),
        HADS_REAL_KEY("aug.speckle_sigma_max", aug_base.sigma_s.hi),
        HADS_REAL_KEY("aug.shadow_width_frac", aug_base.shadow_width_frac),
        HADS_REAL_KEY("aug.shadow_alpha_min", aug_base.alpha.lo),
        HADS_REAL_KEY("aug.shadow_alpha_max", aug_base.alpha.hi),
        HADS_REAL_KEY("aug.gain_top_min", aug_base.g_min.lo),
        HADS_REAL_KEY("aug.gain_top_max", aug_base.g_min.hi),
        HADS_REAL_KEY("aug.gain_bottom_min", aug_base.g_max.lo),
        HADS_REAL_KEY("aug.gain_bottom_max", aug_base.g_max.hi),
        HADS_REAL_KEY("aug.physics_prob", aug_base.physics_prob),
        HADS_REAL_KEY("aug.flip_prob", aug_base.flip_prob),
        HADS_REAL_KEY("aug.max_rotation_deg", aug_base.max_rotation_deg),
        HADS_REAL_KEY("aug.elastic_alpha_224", aug_base.elastic_alpha_px),
        HADS_REAL_KEY("aug.elastic_sigma_224", aug_base.elastic_sigma_px),
    };
    return table;
}

#undef HADS_INT_KEY
#undef HADS_REAL_KEY

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::string> TrainConfig::keys() {
    std::vector<std::string> out;
    for (const auto& k : key_table()) out.emplace_back(k.key);
    return out;
}

void TrainConfig::set(const std::string& key, const std::string& value) {
    for (const auto& k : key_table())
        if (key == k.key) {
            k.set(*this, trim(value));
            return;
        }
    std::string valid;
    for (const auto& k : key_table()) valid += (valid.empty() ? "" : " ") + std::string(k.key);
    throw ConfigError("config: unknown key '" + key + "'; valid keys: " + valid);
}

std::vector<std::pair<std::string, std::string>> TrainConfig::items() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& k : key_table()) out.emplace_back(k.key, k.get(*this));
    return out;
}

void apply_config(TrainConfig& cfg, std::istream& in, const std::string& origin) {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
        cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    }
}

void apply_config_file(TrainConfig& cfg, const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    apply_config(cfg, in, path.string());
}

std::string render_config(const TrainConfig& cfg) {
    std::string out;
    for (const auto& [k, v] : cfg.items()) out += k + "=" + v + "\n";
    return out;
}

void write_epoch_csv(std::ostream& out, std::span<const EpochLog> rows) {
    out << "fold,epoch,lr,train_loss,train_acc,val_loss,val_acc\n";
    for (const auto& r : rows)
        out << r.fold << ',' << r.epoch << ',' << fmt(r.lr) << ',' << fmt(r.train_loss) << ',' << fmt(r.train_acc) << ','
            << fmt(r.val_loss) << ',' << fmt(r.val_acc) << '\n';
}

CheckpointRecord select_global_best(std::span<const CheckpointRecord> records) {
    if (records.empty()) throw StateError("select_global_best: no checkpoint records");
    const CheckpointRecord* best = &records[0];
    for (const auto& r : records) {
        if (!std::isfinite(r.val_loss)) throw StateError("select_global_best: non-finite validation loss");
        const bool better = r.val_loss < best->val_loss ||
                            (r.val_loss == best->val_loss &&
                             (r.fold < best->fold || (r.fold == best->fold && r.epoch < best->epoch)));
        if (better) best = &r;
    }
    return *best;
}

// ---- training ----------------------------------------------------------------

namespace {

constexpr std::uint64_t kInitTag = fnv1a("init");
constexpr std::uint64_t kShuffleTag = fnv1a("shuffle");
constexpr std::uint64_t kAugTag = fnv1a("augment");
constexpr std::uint64_t kDropoutTag = fnv1a("dropout");

std::vector<double> softmax_rows(const Tensor& logits) {
    const std::size_t B = logits.dim(0), K = logits.dim(1);
    std::vector<double> p(B * K);
    const auto z = logits.data();
    for (std::size_t i = 0; i < B; ++i) {
        const double mx = *std::max_element(z.begin() + static_cast<std::ptrdiff_t>(i * K),
                                            z.begin() + static_cast<std::ptrdiff_t>((i + 1) * K));
        double s = 0.0;
        for (std::size_t j = 0; j < K; ++j) s += (p[i * K + j] = std::exp(z[i * K + j] - mx));
        for (std::size_t j = 0; j < K; ++j) p[i * K + j] /= s;
    }
    return p;
}

std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
    std::size_t n = 0;
    const std::size_t K = logits.dim(1);
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (argmax(logits.data().subspan(i * K, K)) == labels[i]) ++n;
    return n;
}

// Eval-mode logits for the given items, batched; no tape is active.
Tensor eval_logits(HadsNetModel& model, const LabeledDataset& ds, std::span<const std::size_t> indices, int batch_size,
                   const ForwardOptions& opts) {
    const auto& mc = model.config();
    Rng unused(0);
    const AugConfig none;
    std::vector<double> all;
    all.reserve(indices.size() * kNumClasses);
    for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t stop = std::min(indices.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<ModelInput> inputs;
        for (std::size_t i = start; i < stop; ++i) {
            const Image img = resize(ds.items.at(indices[i]).image, mc.image_size);
            inputs.push_back(prepare_input(img, mc, Mode::Eval, none, unused));
        }
        const Tensor logits = forward_batch(model, inputs, Mode::Eval, unused, opts);
        all.insert(all.end(), logits.data().begin(), logits.data().end());
    }
    return Tensor(Shape{indices.size(), kNumClasses}, std::move(all));
}

}  // namespace

LabeledDataset resize_dataset(const LabeledDataset& ds, int side) {
    LabeledDataset out = ds;
    for (auto& s : out.items) {
        s.image = resize(s.image, side);
        s.image.id = s.id;
    }
    return out;
}

FoldResult train_fold(const LabeledDataset& ds, const Fold& fold, int fold_number, const TrainConfig& cfg,
                      const fs::path& out_dir, const TrainHooks& hooks) {
    cfg.validate();
    if (fold.train.empty() || fold.val.empty()) throw DataError("train_fold: fold has an empty train or validation part");
    const auto B = static_cast<std::size_t>(cfg.batch_size);
    if (fold.train.size() < B)
        throw ConfigError("train_fold: fold " + std::to_string(fold_number) + " has " + std::to_string(fold.train.size()) +
                          " training items, fewer than one batch of " + std::to_string(B));
    const auto counts = ds.counts_of(fold.train);
    const ClassWeights weights = class_weights(counts);
    const auto fk = static_cast<std::uint64_t>(fold_number);

    HadsNetModel model(cfg.model);
    Rng init_rng = derive_rng(cfg.seed, {kInitTag, fk});
    init_parameters(model, init_rng);
    std::vector<Tensor> params;
    for (auto& p : model.parameters()) params.push_back(p.tensor);
    AdamW opt(params, cfg.optim);
    const ScheduleConfig sched = cfg.schedule();
    const AugConfig aug = cfg.augment();

    std::vector<int> val_labels;
    for (auto i : fold.val) val_labels.push_back(ds.items[i].label);

    FoldResult result;
    result.best.fold = fold_number;
    result.best.val_loss = std::numeric_limits<double>::infinity();
    const fs::path ckpt = out_dir / ("fold" + std::to_string(fold_number) + "_best.ckpt");

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cosine_lr(epoch, sched);
        std::vector<std::size_t> order = fold.train;
        Rng shuffle_rng = derive_rng(cfg.seed, {kShuffleTag, fk, static_cast<std::uint64_t>(epoch)});
        shuffle_in_place(order, shuffle_rng);

        const std::size_t batches = order.size() / B;
        double loss_sum = 0.0;
        std::size_t correct = 0, seen = 0;
        for (std::size_t b = 0; b < batches; ++b) {
            std::vector<ModelInput> inputs;
            std::vector<int> labels;
            for (std::size_t j = b * B; j < (b + 1) * B; ++j) {
                const Sample& s = ds.items[order[j]];
                Rng aug_rng = derive_rng(cfg.seed, {kAugTag, fk, static_cast<std::uint64_t>(epoch), fnv1a(s.id)});
                inputs.push_back(prepare_input(s.image, cfg.model, Mode::Train, aug, aug_rng));
                labels.push_back(s.label);
            }
            Rng drop_rng = derive_rng(cfg.seed, {kDropoutTag, fk, static_cast<std::uint64_t>(epoch), b});
            Tape tape;
            Tensor logits, loss;
            try {
                TapeScope scope(tape);
                logits = forward_batch(model, inputs, Mode::Train, drop_rng);
                loss = focal_loss(logits, labels, weights, cfg.gamma);
                opt.zero_grad();
                tape.backward(loss);
            } catch (const NumericError& e) {
                throw NumericError("fold " + std::to_string(fold_number) + " epoch " + std::to_string(epoch) + " batch " +
                                   std::to_string(b) + ": " + e.what());
            }
            if (!std::isfinite(loss.item()))
                throw NumericError("fold " + std::to_string(fold_number) + " epoch " + std::to_string(epoch) + " batch " +
                                   std::to_string(b) + ": loss " + fmt(loss.item()));
            clip_gradients(params, cfg.clip_norm);
            opt.step(lr);
            loss_sum += loss.item() * static_cast<double>(B);
            correct += count_correct(logits, labels);
            seen += B;
        }

        const Tensor val_logits = eval_logits(model, ds, fold.val, cfg.batch_size, {});
        const double val_loss = focal_loss(val_logits, val_labels, weights, cfg.gamma).item();
        if (!std::isfinite(val_loss))
            throw NumericError("fold " + std::to_string(fold_number) + " epoch " + std::to_string(epoch) +
                               ": validation loss " + fmt(val_loss));
        EpochLog row{fold_number,
                     epoch,
                     lr,
                     loss_sum / static_cast<double>(seen),
                     static_cast<double>(correct) / static_cast<double>(seen),
                     val_loss,
                     static_cast<double>(count_correct(val_logits, val_labels)) / static_cast<double>(fold.val.size())};
        result.log.push_back(row);
        if (val_loss < result.best.val_loss) {
            result.best = {fold_number, epoch, val_loss, ckpt};
            save_checkpoint(ckpt, model, {cfg.seed, fold_number, epoch, val_loss});
        }
        if (hooks.on_epoch) hooks.on_epoch(row);
    }
    std::ofstream log(out_dir / ("fold" + std::to_string(fold_number) + "_log.csv"));
    write_epoch_csv(log, result.log);
    return result;
}

CvResult run_cross_validation(const LabeledDataset& ds, std::span<const std::size_t> train, const TrainConfig& cfg,
                              const fs::path& out_dir, const TrainHooks& hooks) {
    cfg.validate();
    fs::create_directories(out_dir);
    const auto folds = stratified_kfold(ds, train, cfg.folds, cfg.seed);
    CvResult cv;
    std::vector<CheckpointRecord> records;
    for (std::size_t k = 0; k < folds.size(); ++k) {
        cv.folds.push_back(train_fold(ds, folds[k], static_cast<int>(k) + 1, cfg, out_dir, hooks));
        records.push_back(cv.folds.back().best);
    }
    cv.global_best = select_global_best(records);
    const fs::path global = out_dir / "global_best.ckpt";
    fs::copy_file(cv.global_best.path, global, fs::copy_options::overwrite_existing);
    cv.global_best.path = global;

    std::vector<EpochLog> all;
    for (const auto& f : cv.folds) all.insert(all.end(), f.log.begin(), f.log.end());
    std::ofstream log(out_dir / "training_log.csv");
    write_epoch_csv(log, all);
    return cv;
}

// ---- evaluation --------------------------------------------------------------

Evaluation evaluate(HadsNetModel& model, const LabeledDataset& ds, std::span<const std::size_t> indices,
                    const ForwardOptions& opts, int batch_size) {
    if (indices.empty()) throw DataError("evaluate: no items to evaluate");
    const Tensor logits = eval_logits(model, ds, indices, std::max(batch_size, 1), opts);
    const std::vector<double> probs = softmax_rows(logits);
    Evaluation ev;
    std::vector<int> truth, pred;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const Sample& s = ds.items.at(indices[i]);
        PredictionRow row;
        row.id = s.id;
        row.truth = s.label;
        std::copy_n(probs.begin() + static_cast<std::ptrdiff_t>(i * kNumClasses), kNumClasses, row.probs.begin());
        truth.push_back(s.label);
        pred.push_back(argmax(row.probs));
        ev.predictions.push_back(row);
    }
    ev.report = classification_report(truth, pred, probs);
    return ev;
}

void check_model_config(const ModelConfig& expected, const ModelConfig& actual) {
    auto mismatch = [](const std::string& what, std::size_t want, std::size_t have) {
        throw StateError("checkpoint/config mismatch: " + what + " is " + std::to_string(have) + " in the checkpoint, " +
                         std::to_string(want) + " in the configuration");
    };
    if (expected.image_size != actual.image_size)
        mismatch("image_size", static_cast<std::size_t>(expected.image_size), static_cast<std::size_t>(actual.image_size));
    if (expected.texture_dim != actual.texture_dim) mismatch("texture_dim", expected.texture_dim, actual.texture_dim);
    for (std::size_t i = 0; i < 4; ++i)
        if (expected.backbone_channels[i] != actual.backbone_channels[i])
            mismatch("backbone_channels[" + std::to_string(i) + "]", expected.backbone_channels[i], actual.backbone_channels[i]);
}

Evaluation evaluate_checkpoint(const fs::path& checkpoint, const LabeledDataset& ds, std::span<const std::size_t> indices,
                               const ModelConfig* expected) {
    LoadedCheckpoint loaded = load_checkpoint(checkpoint);
    if (expected) check_model_config(*expected, loaded.model.config());
    return evaluate(loaded.model, ds, indices);
}

InferResult infer(HadsNetModel& model, const Image& image) {
    Rng unused(0);
    const Tensor logits = forward(model, image, Mode::Eval, unused);
    const std::vector<double> p = softmax_rows(reshape(logits, Shape{1, kNumClasses}));
    InferResult r;
    std::copy(p.begin(), p.end(), r.probs.begin());
    r.predicted = argmax(r.probs);
    r.class_name = kClassNames[static_cast<std::size_t>(r.predicted)];
    return r;
}

InferResult infer(const fs::path& checkpoint, const fs::path& image) {
    const Image img = read_image(image);
    LoadedCheckpoint loaded = load_checkpoint(checkpoint);
    return infer(loaded.model, img);
}

// ---- full run ----------------------------------------------------------------

namespace {

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string dataset_digest(const LabeledDataset& ds) {
    std::uint64_t h = 14695981039346656037ull;
    auto mix = [&](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& s : ds.items) {
        mix(s.id.data(), s.id.size());
        mix(&s.label, sizeof s.label);
        mix(s.image.pixels.data(), s.image.pixels.size() * sizeof(double));
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace

RunSummary run_training(const LabeledDataset& ds, const TrainConfig& cfg, const fs::path& out_dir,
                        const std::string& data_origin, const TrainHooks& hooks) {
    cfg.validate();
    fs::create_directories(out_dir);
    RunSummary summary;
    summary.split = stratified_split(ds, cfg.test_frac, cfg.seed);

    nlohmann::ordered_json manifest;
    manifest["tool"] = "hadsnet";
    manifest["version"] = "0.1.0";
    manifest["status"] = "running";
    manifest["started_at"] = utc_now();
    nlohmann::ordered_json config;
    for (const auto& [k, v] : cfg.items()) config[k] = v;
    manifest["config"] = config;
    manifest["seed"] = cfg.seed;
    manifest["input"] = {{"data", data_origin},
                         {"items", ds.size()},
                         {"class_counts", ds.class_counts},
                         {"digest", dataset_digest(ds)}};
    manifest["split"] = {{"train", summary.split.train.size()}, {"test", summary.split.test.size()}};
    const fs::path manifest_path = out_dir / "run_manifest.json";
    write_json(manifest_path, manifest);

    const LabeledDataset sized = resize_dataset(ds, cfg.model.image_size);
    summary.cv = run_cross_validation(sized, summary.split.train, cfg, out_dir, hooks);

    std::vector<std::string> outputs{"training_log.csv", "global_best.ckpt"};
    for (std::size_t k = 1; k <= summary.cv.folds.size(); ++k) {
        outputs.push_back("fold" + std::to_string(k) + "_log.csv");
        outputs.push_back("fold" + std::to_string(k) + "_best.ckpt");
    }
    if (!summary.split.test.empty()) {
        summary.test = evaluate_checkpoint(summary.cv.global_best.path, sized, summary.split.test, &cfg.model);
        std::ofstream pred(out_dir / "test_predictions.csv");
        write_predictions_csv(pred, summary.test.predictions);
        std::ofstream txt(out_dir / "test_report.txt");
        txt << render_report(summary.test.report);
        std::ofstream csv(out_dir / "test_report.csv");
        write_report_csv(csv, summary.test.report);
        outputs.insert(outputs.end(), {"test_predictions.csv", "test_report.txt", "test_report.csv"});
    }

    const auto& best = summary.cv.global_best;
    manifest["status"] = "complete";
    manifest["finished_at"] = utc_now();
    manifest["best"] = {{"fold", best.fold}, {"epoch", best.epoch}, {"val_loss", fmt(best.val_loss)}};
    if (!summary.split.test.empty())
        manifest["test"] = {{"accuracy", summary.test.report.accuracy},
                            {"macro_f1", summary.test.report.macro_f1},
                            {"macro_auc", summary.test.report.auc.macro}};
    manifest["outputs"] = outputs;
    write_json(manifest_path, manifest);
    return summary;
}

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
    mallopt(M_TOP_PAD, 64 * 1024 * 1024);
#endif
}

}  // namespace hads
