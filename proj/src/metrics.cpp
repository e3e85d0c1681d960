#include "hads/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>

#include "hads/data.hpp"
#include "hads/errors.hpp"

namespace hads {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : k(classes), cells(classes * classes, 0) {
    for (std::size_t c = 0; c < classes; ++c)
        class_names.push_back(c < kClassNames.size() ? kClassNames[c] : "class" + std::to_string(c));
}

std::size_t ConfusionMatrix::total() const { return std::accumulate(cells.begin(), cells.end(), std::size_t{0}); }

std::size_t ConfusionMatrix::row_sum(std::size_t c) const {
    std::size_t s = 0;
    for (std::size_t j = 0; j < k; ++j) s += at(c, j);
    return s;
}

std::size_t ConfusionMatrix::col_sum(std::size_t c) const {
    std::size_t s = 0;
    for (std::size_t i = 0; i < k; ++i) s += at(i, c);
    return s;
}

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred, std::size_t k) {
    if (truth.size() != pred.size())
        throw DataError("confusion: " + std::to_string(truth.size()) + " labels vs " + std::to_string(pred.size()) +
                        " predictions");
    ConfusionMatrix cm(k);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || static_cast<std::size_t>(truth[i]) >= k || pred[i] < 0 || static_cast<std::size_t>(pred[i]) >= k)
            throw DataError("confusion: label out of range at row " + std::to_string(i));
        ++cm.at(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(pred[i]));
    }
    return cm;
}

std::vector<ClassMetrics> per_class_prf(const ConfusionMatrix& cm) {
    std::vector<ClassMetrics> out(cm.k);
    for (std::size_t c = 0; c < cm.k; ++c) {
        auto& m = out[c];
        const double tp = static_cast<double>(cm.at(c, c));
        const std::size_t predicted = cm.col_sum(c);
        m.support = cm.row_sum(c);
        if (predicted == 0)
            m.precision_degenerate = true;
        else
            m.precision = tp / static_cast<double>(predicted);
        if (m.support == 0)
            m.recall_degenerate = true;
        else
            m.recall = tp / static_cast<double>(m.support);
        if (m.precision + m.recall == 0.0)
            m.f1_degenerate = true;
        else
            m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    }
    return out;
}

double accuracy(const ConfusionMatrix& cm) {
    const std::size_t total = cm.total();
    if (total == 0) throw DataError("accuracy: empty confusion matrix");
    std::size_t trace = 0;
    for (std::size_t c = 0; c < cm.k; ++c) trace += cm.at(c, c);
    return static_cast<double>(trace) / static_cast<double>(total);
}

double macro_average(std::span<const double> values) {
    if (values.empty()) return 0.0;
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
}

double weighted_average(std::span<const double> values, std::span<const std::size_t> supports) {
    if (values.size() != supports.size()) throw DimensionError("weighted_average: length mismatch");
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        s += values[i] * static_cast<double>(supports[i]);
        n += supports[i];
    }
    return n == 0 ? 0.0 : s / static_cast<double>(n);
}

namespace {

// Returns 2 * U (an integer) for the positives, using average ranks on ties.
double twice_mann_whitney(std::span<const double> scores, std::span<const bool> positive, std::size_t& n_pos,
                          std::size_t& n_neg) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // twice the rank sum keeps every average rank an integer
    double twice_rank_sum = 0.0;
    n_pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double twice_avg = static_cast<double>(i + 1 + j + 1);
        for (std::size_t t = i; t <= j; ++t)
            if (positive[order[t]]) {
                twice_rank_sum += twice_avg;
                ++n_pos;
            }
        i = j + 1;
    }
    n_neg = n - n_pos;
    return twice_rank_sum - static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
}

}  // namespace

double pairwise_auc(std::span<const double> scores, std::span<const bool> positive) {
    if (scores.size() != positive.size()) throw DimensionError("pairwise_auc: length mismatch");
    double twice = 0.0;
    std::size_t P = 0, N = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) (positive[i] ? P : N)++;
    if (P == 0 || N == 0) throw DataError("pairwise_auc: needs both positives and negatives");
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!positive[i]) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (positive[j]) continue;
            if (scores[i] > scores[j])
                twice += 2.0;
            else if (scores[i] == scores[j])
                twice += 1.0;
        }
    }
    return twice / (2.0 * static_cast<double>(P) * static_cast<double>(N));
}

AucResult roc_auc_ovr(std::span<const double> scores, std::span<const int> truth, std::size_t k) {
    const std::size_t n = truth.size();
    if (scores.size() != n * k)
        throw DimensionError("roc_auc_ovr: expected " + std::to_string(n * k) + " scores, got " + std::to_string(scores.size()));
    for (double s : scores)
        if (!std::isfinite(s)) throw DataError("roc_auc_ovr: non-finite score");
    for (int t : truth)
        if (t < 0 || static_cast<std::size_t>(t) >= k) throw DataError("roc_auc_ovr: label out of range");
    AucResult r;
    r.per_class.assign(k, 0.0);
    r.defined.assign(k, false);
    std::vector<double> column(n);
    std::unique_ptr<bool[]> pos(new bool[n]);
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            column[i] = scores[i * k + c];
            pos[i] = static_cast<std::size_t>(truth[i]) == c;
        }
        std::size_t P = 0, N = 0;
        const double twice_u = twice_mann_whitney(column, std::span<const bool>(pos.get(), n), P, N);
        const std::string name = c < kClassNames.size() ? kClassNames[c] : std::to_string(c);
        if (P == 0 || N == 0) {
            r.warnings.push_back("AUC undefined for class " + name + " (" + (P == 0 ? "no positives" : "no negatives") +
                                 "); excluded from macro average");
            continue;
        }
        r.per_class[c] = twice_u / (2.0 * static_cast<double>(P) * static_cast<double>(N));
        r.defined[c] = true;
        sum += r.per_class[c];
        ++used;
    }
    r.macro = used ? sum / static_cast<double>(used) : 0.0;
    return r;
}

EvalReport classification_report(std::span<const int> truth, std::span<const int> pred, std::span<const double> scores,
                                 std::size_t k) {
    EvalReport r;
    r.confusion = confusion(truth, pred, k);
    r.classes = per_class_prf(r.confusion);
    r.total = r.confusion.total();
    r.accuracy = accuracy(r.confusion);
    std::vector<double> p, rc, f;
    std::vector<std::size_t> sup;
    for (const auto& m : r.classes) {
        p.push_back(m.precision);
        rc.push_back(m.recall);
        f.push_back(m.f1);
        sup.push_back(m.support);
    }
    r.macro_precision = macro_average(p);
    r.macro_recall = macro_average(rc);
    r.macro_f1 = macro_average(f);
    r.weighted_precision = weighted_average(p, sup);
    r.weighted_recall = weighted_average(rc, sup);
    r.weighted_f1 = weighted_average(f, sup);
    if (!scores.empty()) r.auc = roc_auc_ovr(scores, truth, k);
    return r;
}

std::string render_report(const EvalReport& r) {
    std::string out;
    char line[160];
    std::snprintf(line, sizeof line, "%-14s%10s%10s%10s%10s\n", "class", "precision", "recall", "f1", "support");
    out += line;
    for (std::size_t c = 0; c < r.classes.size(); ++c) {
        const auto& m = r.classes[c];
        std::snprintf(line, sizeof line, "%-14s%10.2f%10.2f%10.3f%10zu\n", r.confusion.class_names[c].c_str(),
                      m.precision, m.recall, m.f1, m.support);
        out += line;
    }
    std::snprintf(line, sizeof line, "%-14s%10.2f%10.2f%10.3f%10zu\n", "macro avg", r.macro_precision, r.macro_recall,
                  r.macro_f1, r.total);
    out += line;
    std::snprintf(line, sizeof line, "%-14s%10.2f%10.2f%10.3f%10zu\n", "weighted avg", r.weighted_precision,
                  r.weighted_recall, r.weighted_f1, r.total);
    out += line;
    std::snprintf(line, sizeof line, "accuracy: %.2f%%  macro AUC: %.4f  macro F1: %.4f\n", 100.0 * r.accuracy, r.auc.macro,
                  r.macro_f1);
    out += line;
    for (const auto& w : r.auc.warnings) out += "warning: " + w + "\n";
    return out;
}

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void write_report_csv(std::ostream& out, const EvalReport& r) {
    out << "section,name,metric,value,flag\n";
    for (std::size_t c = 0; c < r.classes.size(); ++c) {
        const auto& m = r.classes[c];
        const auto& name = r.confusion.class_names[c];
        out << "class," << name << ",precision," << num(m.precision) << ',' << m.precision_degenerate << '\n';
        out << "class," << name << ",recall," << num(m.recall) << ',' << m.recall_degenerate << '\n';
        out << "class," << name << ",f1," << num(m.f1) << ',' << m.f1_degenerate << '\n';
        out << "class," << name << ",support," << m.support << ",0\n";
    }
    out << "macro,,precision," << num(r.macro_precision) << ",0\n";
    out << "macro,,recall," << num(r.macro_recall) << ",0\n";
    out << "macro,,f1," << num(r.macro_f1) << ",0\n";
    out << "weighted,,precision," << num(r.weighted_precision) << ",0\n";
    out << "weighted,,recall," << num(r.weighted_recall) << ",0\n";
    out << "weighted,,f1," << num(r.weighted_f1) << ",0\n";
    out << "overall,,accuracy," << num(r.accuracy) << ",0\n";
    out << "overall,,total," << r.total << ",0\n";
    for (std::size_t c = 0; c < r.auc.per_class.size(); ++c)
        out << "auc," << r.confusion.class_names[c] << ",auc," << num(r.auc.per_class[c]) << ',' << !r.auc.defined[c] << '\n';
    out << "auc,macro,auc," << num(r.auc.macro) << ",0\n";
    for (std::size_t i = 0; i < r.confusion.k; ++i)
        for (std::size_t j = 0; j < r.confusion.k; ++j)
            out << "confusion," << r.confusion.class_names[i] << ',' << r.confusion.class_names[j] << ','
                << r.confusion.at(i, j) << ",0\n";
}

EvalReport read_report_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "section,name,metric,value,flag") throw DataError("report csv: bad header");
    struct Row {
        std::string section, name, metric, value;
        bool flag;
    };
    std::vector<Row> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 5) throw DataError("report csv: malformed row: " + line);
        rows.push_back({f[0], f[1], f[2], f[3], f[4] == "1"});
    }
    std::vector<std::string> names;
    for (const auto& row : rows)
        if (row.section == "class" && std::find(names.begin(), names.end(), row.name) == names.end()) names.push_back(row.name);
    const std::size_t k = names.size();
    auto idx = [&](const std::string& n) {
        auto it = std::find(names.begin(), names.end(), n);
        if (it == names.end()) throw DataError("report csv: unknown class " + n);
        return static_cast<std::size_t>(it - names.begin());
    };
    EvalReport r;
    r.confusion = ConfusionMatrix(k);
    r.confusion.class_names = names;
    r.classes.assign(k, {});
    r.auc.per_class.assign(k, 0.0);
    r.auc.defined.assign(k, true);
    try {
        for (const auto& row : rows) {
            const double v = std::stod(row.value);
            if (row.section == "class") {
                auto& m = r.classes[idx(row.name)];
                if (row.metric == "precision") m.precision = v, m.precision_degenerate = row.flag;
                else if (row.metric == "recall") m.recall = v, m.recall_degenerate = row.flag;
                else if (row.metric == "f1") m.f1 = v, m.f1_degenerate = row.flag;
                else if (row.metric == "support") m.support = std::stoul(row.value);
            } else if (row.section == "macro" || row.section == "weighted") {
                const bool macro = row.section == "macro";
                double& dst = row.metric == "precision" ? (macro ? r.macro_precision : r.weighted_precision)
                              : row.metric == "recall"  ? (macro ? r.macro_recall : r.weighted_recall)
                                                        : (macro ? r.macro_f1 : r.weighted_f1);
                dst = v;
            } else if (row.section == "overall") {
                if (row.metric == "accuracy") r.accuracy = v;
                else r.total = std::stoul(row.value);
            } else if (row.section == "auc") {
                if (row.name == "macro") {
                    r.auc.macro = v;
                } else {
                    r.auc.per_class[idx(row.name)] = v;
                    r.auc.defined[idx(row.name)] = !row.flag;
                }
            } else if (row.section == "confusion") {
                r.confusion.at(idx(row.name), idx(row.metric)) = std::stoul(row.value);
            }
        }
    } catch (const std::logic_error&) {
        throw DataError("report csv: unparsable number");
    }
    return r;
}

void write_predictions_csv(std::ostream& out, std::span<const PredictionRow> rows) {
    out << "id,true_label,p0,p1,p2\n";
    for (const auto& r : rows)
        out << r.id << ',' << r.truth << ',' << num(r.probs[0]) << ',' << num(r.probs[1]) << ',' << num(r.probs[2]) << '\n';
}

std::vector<PredictionRow> read_predictions_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open predictions file: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("id,true_label,p0,p1,p2", 0) != 0)
        throw DataError("predictions file lacks header id,true_label,p0,p1,p2: " + path.string());
    std::vector<PredictionRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 5) throw DataError("predictions file line " + std::to_string(lineno) + ": expected 5 fields");
        PredictionRow r;
        r.id = f[0];
        try {
            r.truth = std::stoi(f[1]);
            for (int c = 0; c < 3; ++c) r.probs[static_cast<std::size_t>(c)] = std::stod(f[2 + static_cast<std::size_t>(c)]);
        } catch (const std::logic_error&) {
            throw DataError("predictions file line " + std::to_string(lineno) + ": unparsable number");
        }
        if (r.truth < 0 || r.truth > 2) throw DataError("predictions file line " + std::to_string(lineno) + ": label out of range");
        rows.push_back(r);
    }
    return rows;
}

int argmax(std::span<const double> values) {
    int best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    return best;
}

EvalReport report_from_predictions(std::span<const PredictionRow> rows) {
    std::vector<int> truth, pred;
    std::vector<double> scores;
    for (const auto& r : rows) {
        truth.push_back(r.truth);
        pred.push_back(argmax(r.probs));
        scores.insert(scores.end(), r.probs.begin(), r.probs.end());
    }
    return classification_report(truth, pred, scores);
}

}  // namespace hads
