#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hads/tensor.hpp"

namespace hads {

/// Inverse-frequency weights, index order benign, malignant, normal.
struct ClassWeights {
    std::vector<double> alpha;
};

/// alpha_c = N / (K * N_c). Any zero count is a ConfigError.
ClassWeights class_weights(std::span<const std::size_t> counts);

/// Mean over the batch of -alpha_y (1 - p_y)^gamma log p_y with p = softmax(logits)
/// row-wise; p is clamped at 1e-12 inside the log.
Tensor focal_loss(const Tensor& logits, std::span<const int> labels, const ClassWeights& weights, double gamma);

struct ScheduleConfig {
    double eta_max = 1e-4;
    double eta_min = 1e-6;
    int t_max = 50;

    void validate() const;
};

/// eta_min + (eta_max - eta_min)(1 + cos(pi t / T_max)) / 2, for 0 <= t <= T_max.
double cosine_lr(int t, const ScheduleConfig& cfg);

struct ClipResult {
    double norm = 0.0;   // global norm before clipping
    double scale = 1.0;  // factor applied (1 when unchanged)
};

/// Rescales all gradients together when their global l2 norm exceeds max_norm.
ClipResult clip_gradients(std::span<const Tensor> params, double max_norm = 1.0);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

struct OptimState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t t = 0;
    double lr = 0.0;
};

/// AdamW with decay decoupled from the gradient moments:
/// theta <- theta (1 - lr lambda) - lr m_hat / (sqrt(v_hat) + eps).
class AdamW {
public:
    AdamW(std::vector<Tensor> params, AdamWConfig cfg = {});

    /// Every parameter must hold a gradient (StateError otherwise).
    void step(double lr);
    void zero_grad();

    const OptimState& state() const { return state_; }
    const AdamWConfig& config() const { return cfg_; }
    std::span<const Tensor> params() const { return params_; }

private:
    std::vector<Tensor> params_;
    AdamWConfig cfg_;
    OptimState state_;
};

}  // namespace hads
