#pragma once

// Dense float64 tensors with a tape-based reverse-mode autodiff.
//
// A Tensor is a cheap handle onto shared storage. Operators record a backward
// rule on the thread's active Tape (see TapeScope) whenever at least one input
// requires a gradient; with no active tape nothing is recorded, which is how
// evaluation passes run.

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hads/rng.hpp"

namespace hads {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
};
}  // namespace detail

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor(Shape{1}, {v}); }

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t i) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    /// Direct value access. Only initializers, optimizers and finite-difference
    /// probes write through this.
    std::span<double> mutable_data() const;
    double item() const;
    double operator[](std::size_t i) const { return data()[i]; }

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);

    bool has_grad() const;
    std::span<const double> grad() const;
    /// Gradient buffer, allocated (zero) on first use.
    std::span<double> grad_buffer() const;
    void zero_grad() const;

    /// Value copy that does not participate in autodiff.
    Tensor detach() const;

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

private:
    friend class Tape;
    friend Tensor record_op(Shape, std::vector<double>, std::initializer_list<Tensor>,
                            std::function<void(std::span<const double>)>);
    std::shared_ptr<detail::Node> node_;
};

using BackwardFn = std::function<void(std::span<const double> grad_out)>;

/// Creates an operator result. If a tape is active and any input requires a
/// gradient, the result requires one too and `backward` is recorded; it
/// receives the result's gradient and must accumulate into the inputs'
/// grad_buffer() (only for inputs that require a gradient).
Tensor record_op(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                 BackwardFn backward);

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Seeds d(loss)/d(loss) = 1 and runs every recorded rule in reverse
    /// creation order. Gradients accumulate into existing buffers.
    void backward(const Tensor& loss);
    void reset();
    std::size_t size() const { return entries_.size(); }
    bool consumed() const { return consumed_; }

private:
    friend Tensor record_op(Shape, std::vector<double>, std::initializer_list<Tensor>, BackwardFn);
    struct Entry {
        std::shared_ptr<detail::Node> output;
        BackwardFn backward;
    };
    std::vector<Entry> entries_;
    bool consumed_ = false;
};

/// Makes `tape` the active tape of the calling thread for the scope's lifetime.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

Tape* active_tape();

enum class Mode { Train, Eval };

struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    explicit BatchNormState(std::size_t channels = 0)
        : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

// ---- operators -------------------------------------------------------------

/// x: [n] or [B x n], W: [m x n], b: [m] or undefined (no bias).
Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b);

/// 3x3 cross-correlation, stride 1, zero padding 1.
/// x: [Cin x H x W] or [N x Cin x H x W]; kernels: [Cout x Cin x 3 x 3]; bias: [Cout].
/// Every output value is (sum over (ci, ky, kx) in that order, fused
/// multiply-add from 0) + bias.
Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias);

/// 2x2 stride-2 max pooling over the last two axes (rank 3 or 4). Gradient goes
/// to the first maximal cell in row-major order.
Tensor maxpool2x2(const Tensor& x);

/// Per-channel batch normalization on [N x C x H x W].
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                   Mode mode);

/// Normalizes over the last axis; x is [d] or [B x d].
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor relu(const Tensor& x);
/// Softmax over the last axis (max-subtracted).
Tensor softmax(const Tensor& x);
/// Inverted dropout; identity in eval mode.
Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng);

/// Mean over the spatial axes: [C x H x W] -> [C], [N x C x H x W] -> [N x C].
Tensor global_avg_pool(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

/// Per-head dot products: q, k are [B x H*d] (or [H*d]); returns [B x H] (or [H]).
Tensor head_dot(const Tensor& q, const Tensor& k, std::size_t heads);
/// Scales head h's slice of v by w[.., h]: w [B x H], v [B x H*d] -> [B x H*d].
Tensor head_scale(const Tensor& w, const Tensor& v, std::size_t heads);

/// Stacks equally shaped tensors along a new leading axis (values only).
Tensor stack_values(std::span<const Tensor> items);

// ---- verification ----------------------------------------------------------

/// Largest |analytic - central difference| / max(1, |analytic|) over the
/// probed coordinates of `x`. `loss_fn` must rebuild the scalar loss from the
/// current values of `x` each call. When max_coords is nonzero and smaller
/// than x.numel(), a seeded sample of coordinates (always including the one
/// with the largest analytic gradient) is probed.
double grad_check(const std::function<Tensor()>& loss_fn, Tensor x, double h = 1e-5,
                  std::size_t max_coords = 0, std::uint64_t seed = 0);

// ---- serialization ---------------------------------------------------------

/// Little-endian: "HADS", u32 version, u32 rank, u32 extents, then f64 values.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

}  // namespace hads
