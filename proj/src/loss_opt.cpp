#include "hads/loss_opt.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "hads/errors.hpp"

namespace hads {

ClassWeights class_weights(std::span<const std::size_t> counts) {
    if (counts.empty()) throw ConfigError("class_weights: no classes");
    std::size_t total = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] == 0) throw ConfigError("class_weights: class " + std::to_string(c) + " has no samples");
        total += counts[c];
    }
    const double K = static_cast<double>(counts.size());
    ClassWeights w;
    for (auto n : counts) w.alpha.push_back(static_cast<double>(total) / (K * static_cast<double>(n)));
    return w;
}

Tensor focal_loss(const Tensor& logits, std::span<const int> labels, const ClassWeights& weights, double gamma) {
    if (logits.rank() != 2) throw DimensionError("focal_loss: logits must be [B x K], got " + shape_str(logits.shape()));
    const std::size_t B = logits.dim(0), K = logits.dim(1);
    if (labels.size() != B)
        throw DimensionError("focal_loss: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(B));
    if (weights.alpha.size() != K) throw DimensionError("focal_loss: class weight count does not match logits width");
    if (!(gamma >= 0.0)) throw ConfigError("focal_loss: gamma must be nonnegative");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= K) throw DataError("focal_loss: label " + std::to_string(y) + " out of range");

    constexpr double kClamp = 1e-12;
    const double log_clamp = std::log(kClamp);
    const auto z = logits.data();
    std::vector<double> probs(B * K);
    std::vector<double> coef(B);  // d loss_i / d z_j = coef_i * (delta_jy - p_j)
    double total = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
        const double* row = z.data() + i * K;
        double* p = probs.data() + i * K;
        const double mx = *std::max_element(row, row + K);
        double s = 0.0;
        for (std::size_t j = 0; j < K; ++j) s += (p[j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < K; ++j) p[j] /= s;
        const auto y = static_cast<std::size_t>(labels[i]);
        double q = 0.0;  // 1 - p_y, summed from the other classes to keep precision near p_y = 1
        for (std::size_t j = 0; j < K; ++j)
            if (j != y) q += p[j];
        const double exact_log = row[y] - mx - std::log(s);
        const bool clamped = exact_log < log_clamp;
        const double lp = clamped ? log_clamp : exact_log;
        const double a = weights.alpha[y];
        const double focal = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
        total += -a * focal * lp;
        const double dfocal = (gamma == 0.0 || q == 0.0) ? 0.0 : gamma * std::pow(q, gamma - 1.0);
        coef[i] = -a * ((clamped ? 0.0 : focal) - dfocal * p[y] * lp);
    }
    const double inv_b = 1.0 / static_cast<double>(B);
    return record_op(Shape{1}, {total * inv_b}, {logits},
                     [logits, probs = std::move(probs), coef = std::move(coef), labels = std::vector<int>(labels.begin(), labels.end()),
                      B, K, inv_b](std::span<const double> g) {
                         auto dz = logits.grad_buffer();
                         for (std::size_t i = 0; i < B; ++i) {
                             const double c = g[0] * inv_b * coef[i];
                             for (std::size_t j = 0; j < K; ++j) {
                                 const double delta = static_cast<int>(j) == labels[i] ? 1.0 : 0.0;
                                 dz[i * K + j] += c * (delta - probs[i * K + j]);
                             }
                         }
                     });
}

void ScheduleConfig::validate() const {
    if (t_max < 1) throw ConfigError("schedule: t_max must be at least 1");
    if (!(eta_min < eta_max)) throw ConfigError("schedule: eta_min must be below eta_max");
    if (!(eta_min >= 0.0)) throw ConfigError("schedule: eta_min must be nonnegative");
}

double cosine_lr(int t, const ScheduleConfig& cfg) {
    cfg.validate();
    if (t < 0 || t > cfg.t_max)
        throw ConfigError("cosine_lr: epoch " + std::to_string(t) + " outside [0, " + std::to_string(cfg.t_max) + "]");
    if (t == 0) return cfg.eta_max;
    if (t == cfg.t_max) return cfg.eta_min;
    const double c = std::cos(std::numbers::pi * t / cfg.t_max);
    return cfg.eta_min + 0.5 * (cfg.eta_max - cfg.eta_min) * (1.0 + c);
}

ClipResult clip_gradients(std::span<const Tensor> params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params)
        if (p.has_grad())
            for (double g : p.grad()) sq += g * g;
    ClipResult r;
    r.norm = std::sqrt(sq);
    if (r.norm > max_norm) {
        r.scale = max_norm / r.norm;
        for (const auto& p : params)
            if (p.has_grad())
                for (double& g : p.grad_buffer()) g *= r.scale;
    }
    return r;
}

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (!(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0) || !(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0))
        throw ConfigError("adamw: betas must lie in [0, 1)");
    if (!(cfg_.eps > 0.0) || !(cfg_.weight_decay >= 0.0)) throw ConfigError("adamw: eps must be positive, decay nonnegative");
    for (const auto& p : params_) {
        state_.m.emplace_back(p.numel(), 0.0);
        state_.v.emplace_back(p.numel(), 0.0);
    }
}

void AdamW::step(double lr) {
    for (std::size_t k = 0; k < params_.size(); ++k)
        if (!params_[k].has_grad())
            throw StateError("adamw: parameter " + std::to_string(k) + " has no gradient; run backward first");
    ++state_.t;
    state_.lr = lr;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - b1, c2 = 1.0 - b2;
    const double bias1 = 1.0 - std::pow(b1, static_cast<double>(state_.t));
    const double bias2 = 1.0 - std::pow(b2, static_cast<double>(state_.t));
    const double shrink = 1.0 - lr * cfg_.weight_decay;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto theta = params_[k].mutable_data();
        const auto g = params_[k].grad();
        auto& m = state_.m[k];
        auto& v = state_.v[k];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = b1 * m[i] + c1 * g[i];
            v[i] = b2 * v[i] + c2 * g[i] * g[i];
            const double mh = m[i] / bias1, vh = v[i] / bias2;
            theta[i] = theta[i] * shrink - lr * (mh / (std::sqrt(vh) + cfg_.eps));
        }
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

}  // namespace hads
