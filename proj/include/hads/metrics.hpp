#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace hads {

struct ConfusionMatrix {
    std::size_t k = 0;
    std::vector<std::size_t> cells;  // row = true class, column = predicted
    std::vector<std::string> class_names;

    explicit ConfusionMatrix(std::size_t classes = 3);
    std::size_t& at(std::size_t truth, std::size_t pred) { return cells[truth * k + pred]; }
    std::size_t at(std::size_t truth, std::size_t pred) const { return cells[truth * k + pred]; }
    std::size_t total() const;
    std::size_t row_sum(std::size_t c) const;
    std::size_t col_sum(std::size_t c) const;
};

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred, std::size_t k = 3);

/// A metric whose denominator was zero is reported as 0 with its flag set.
struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
    bool precision_degenerate = false;
    bool recall_degenerate = false;
    bool f1_degenerate = false;
};

std::vector<ClassMetrics> per_class_prf(const ConfusionMatrix& cm);

/// trace / total; an empty matrix is a DataError.
double accuracy(const ConfusionMatrix& cm);
double macro_average(std::span<const double> values);
double weighted_average(std::span<const double> values, std::span<const std::size_t> supports);

struct AucResult {
    std::vector<double> per_class;  // 0 where undefined
    std::vector<bool> defined;
    double macro = 0.0;  // mean over defined classes
    std::vector<std::string> warnings;
};

/// One-vs-rest Mann-Whitney AUC with average ranks for ties. `scores` is
/// row-major [n x k].
AucResult roc_auc_ovr(std::span<const double> scores, std::span<const int> truth, std::size_t k = 3);

/// Exact pairwise AUC for one binary problem: (correctly ordered pairs + ties / 2)
/// over all positive-negative pairs. Quadratic; used as a reference.
double pairwise_auc(std::span<const double> scores, std::span<const bool> positive);

struct EvalReport {
    ConfusionMatrix confusion;
    std::vector<ClassMetrics> classes;
    double accuracy = 0.0;
    double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
    double weighted_precision = 0.0, weighted_recall = 0.0, weighted_f1 = 0.0;
    AucResult auc;
    std::size_t total = 0;
};

EvalReport classification_report(std::span<const int> truth, std::span<const int> pred, std::span<const double> scores,
                                 std::size_t k = 3);

/// Fixed-width text table: one row per class, macro and weighted averages,
/// then accuracy, macro AUC and macro F1.
std::string render_report(const EvalReport& report);

/// `section,name,metric,value,flag` rows; values printed with 17 significant digits.
void write_report_csv(std::ostream& out, const EvalReport& report);
EvalReport read_report_csv(std::istream& in);

/// Predictions file rows: `id,true_label,p0,p1,p2`.
struct PredictionRow {
    std::string id;
    int truth = 0;
    std::array<double, 3> probs{};
};

void write_predictions_csv(std::ostream& out, std::span<const PredictionRow> rows);
std::vector<PredictionRow> read_predictions_csv(const std::filesystem::path& path);

/// Lowest index among maximal entries.
int argmax(std::span<const double> values);

/// Report built from a predictions file (prediction = argmax of the probabilities).
EvalReport report_from_predictions(std::span<const PredictionRow> rows);

}  // namespace hads
