#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hads/augment.hpp"
#include "hads/data.hpp"
#include "hads/loss_opt.hpp"
#include "hads/metrics.hpp"
#include "hads/model.hpp"

namespace hads {

struct TrainConfig {
    int epochs = 50;
    int batch_size = 16;
    std::uint64_t seed = 20240611;
    int folds = 5;
    double gamma = 2.0;
    double clip_norm = 1.0;
    double test_frac = 0.15;
    /// Cosine schedule length; 0 means "equal to epochs", any other value must match epochs.
    int t_max = 0;
    double lr_max = 1e-4;
    double lr_min = 1e-6;
    AdamWConfig optim;
    ModelConfig model = ModelConfig::full();
    /// Physics and geometric augmentation; elastic parameters are given at 224 px
    /// and scaled with model.image_size (see augment()).
    AugConfig aug_base;

    /// Reduced model and schedule for CPU-scale runs (64 px, D1 = 256).
    static TrainConfig desk();

    ScheduleConfig schedule() const;
    AugConfig augment() const;
    void validate() const;

    /// Sets one key; unknown keys raise a ConfigError listing every valid key.
    void set(const std::string& key, const std::string& value);
    /// Every addressable key with its current value, in a stable order.
    std::vector<std::pair<std::string, std::string>> items() const;
    static std::vector<std::string> keys();
};

/// Flat `key=value` lines; blank lines and `#` comments are ignored.
void apply_config(TrainConfig& cfg, std::istream& in, const std::string& origin = "config");
void apply_config_file(TrainConfig& cfg, const std::filesystem::path& path);
std::string render_config(const TrainConfig& cfg);

struct EpochLog {
    int fold = 0;  // 1-based
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
};

void write_epoch_csv(std::ostream& out, std::span<const EpochLog> rows);

struct CheckpointRecord {
    int fold = 0;  // 1-based
    int epoch = 0;
    double val_loss = 0.0;
    std::filesystem::path path;
};

/// Minimum validation loss; ties go to the lower fold, then the lower epoch.
CheckpointRecord select_global_best(std::span<const CheckpointRecord> records);

struct FoldResult {
    std::vector<EpochLog> log;
    CheckpointRecord best;
};

struct TrainHooks {
    std::function<void(const EpochLog&)> on_epoch;
};

/// Copy of `ds` with every image resampled to side x side.
LabeledDataset resize_dataset(const LabeledDataset& ds, int side);

/// Fresh model per fold; per epoch: seeded shuffle, batches (last partial one
/// dropped), focal loss, backward, clipping, AdamW at the cosine rate, then an
/// eval-mode validation pass. `ds` must already be at model resolution.
/// The fold's best checkpoint goes to out_dir/fold<k>_best.ckpt.
FoldResult train_fold(const LabeledDataset& ds, const Fold& fold, int fold_number, const TrainConfig& cfg,
                      const std::filesystem::path& out_dir, const TrainHooks& hooks = {});

struct CvResult {
    std::vector<FoldResult> folds;
    CheckpointRecord global_best;  // path points at the copied global_best.ckpt
};

CvResult run_cross_validation(const LabeledDataset& ds, std::span<const std::size_t> train, const TrainConfig& cfg,
                              const std::filesystem::path& out_dir, const TrainHooks& hooks = {});

struct Evaluation {
    EvalReport report;
    std::vector<PredictionRow> predictions;
};

/// Eval-mode forward (images resized to the model's resolution), softmax,
/// argmax with ties to the lowest class.
Evaluation evaluate(HadsNetModel& model, const LabeledDataset& ds, std::span<const std::size_t> indices,
                    const ForwardOptions& opts = {}, int batch_size = 16);

/// Loads a checkpoint and evaluates it; when `expected` is given, any
/// architecture mismatch is a StateError naming the differing dimension.
/// The checkpoint file is only read.
Evaluation evaluate_checkpoint(const std::filesystem::path& checkpoint, const LabeledDataset& ds,
                               std::span<const std::size_t> indices, const ModelConfig* expected = nullptr);

void check_model_config(const ModelConfig& expected, const ModelConfig& actual);

struct InferResult {
    int predicted = 0;
    std::string class_name;
    std::array<double, 3> probs{};
};

InferResult infer(HadsNetModel& model, const Image& image);
InferResult infer(const std::filesystem::path& checkpoint, const std::filesystem::path& image);

/// Full `train` pipeline: split, cross-validation, global-best copy and held-out
/// evaluation. Writes into out_dir: run_manifest.json (first, before any
/// training), fold<k>_log.csv, training_log.csv, fold<k>_best.ckpt,
/// global_best.ckpt, test_predictions.csv, test_report.txt, test_report.csv.
struct RunSummary {
    CvResult cv;
    Evaluation test;
    SplitPlan split;
};

RunSummary run_training(const LabeledDataset& ds, const TrainConfig& cfg, const std::filesystem::path& out_dir,
                        const std::string& data_origin, const TrainHooks& hooks = {});

/// Keeps freed tensor buffers on the heap instead of returning them to the OS
/// (glibc only; a no-op elsewhere). Training allocates and releases multi-MB
/// buffers at a high rate, and fresh pages cost about a sixth of the run time.
void tune_allocator();

}  // namespace hads
