#include "hads/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "gemm.hpp"
#include "hads/errors.hpp"

namespace hads {

static_assert(std::endian::native == std::endian::little, "tensor serialization assumes a little-endian host");

namespace {

thread_local Tape* g_active_tape = nullptr;

// Message arguments are only evaluated on failure.
#define HADS_REQUIRE(cond, what)                       \
    do {                                               \
        if (!(cond)) throw DimensionError(what);       \
    } while (0)

std::string shapes_msg(const char* op, const Shape& a, const Shape& b) {
    return std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b);
}

// Eight interleaved partial sums: a fixed reduction order that the compiler can vectorize.
double lane_sum(const double* v, std::size_t n) {
    double acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (std::size_t l = 0; l < 8; ++l) acc[l] += v[i + l];
    for (; i < n; ++i) acc[i % 8] += v[i];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

double lane_sq_dev(const double* v, std::size_t n, double mean) {
    double acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (std::size_t l = 0; l < 8; ++l) acc[l] += (v[i + l] - mean) * (v[i + l] - mean);
    for (; i < n; ++i) acc[i % 8] += (v[i] - mean) * (v[i] - mean);
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

double lane_dot(const double* a, const double* b, std::size_t n) {
    double acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
    for (; i < n; ++i) acc[i % 8] += a[i] * b[i];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

bool all_finite(const std::vector<double>& v) {
    // x * 0 is NaN exactly when x is infinite or NaN
    double acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= v.size(); i += 8)
        for (std::size_t l = 0; l < 8; ++l) acc[l] += v[i + l] * 0.0;
    for (; i < v.size(); ++i) acc[0] += v[i] * 0.0;
    double s = 0.0;
    for (double a : acc) s += a;
    return s == 0.0;
}

bool wants_grad(const Tensor& t) { return t.defined() && t.requires_grad(); }

void accumulate(const Tensor& t, std::span<const double> g) {
    auto buf = t.grad_buffer();
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

}  // namespace

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ')';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

// ---- Tensor ------------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill) : Tensor(shape, std::vector<double>(shape_numel(shape), fill)) {}

Tensor::Tensor(Shape shape, std::vector<double> values) {
    HADS_REQUIRE(!shape.empty(), "tensor: rank must be at least 1");
    for (auto e : shape) HADS_REQUIRE(e >= 1, "tensor: every extent must be >= 1, got " + shape_str(shape));
    HADS_REQUIRE(shape_numel(shape) == values.size(),
            "tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->value = std::move(values);
}

const Shape& Tensor::shape() const {
    if (!node_) throw StateError("tensor: use of undefined tensor");
    return node_->shape;
}
std::size_t Tensor::dim(std::size_t i) const {
    const auto& s = shape();
    HADS_REQUIRE(i < s.size(), "tensor: axis " + std::to_string(i) + " out of range for " + shape_str(s));
    return s[i];
}
std::size_t Tensor::numel() const { return shape_numel(shape()); }
std::span<const double> Tensor::data() const {
    shape();
    return node_->value;
}
std::span<double> Tensor::mutable_data() const {
    shape();
    return node_->value;
}
double Tensor::item() const {
    HADS_REQUIRE(numel() == 1, "item: tensor " + shape_str(shape()) + " is not a scalar");
    return node_->value[0];
}
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
Tensor& Tensor::set_requires_grad(bool on) {
    shape();
    node_->requires_grad = on;
    return *this;
}
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }
std::span<const double> Tensor::grad() const {
    shape();
    return node_->grad;
}
std::span<double> Tensor::grad_buffer() const {
    shape();
    if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
    return node_->grad;
}
void Tensor::zero_grad() const {
    if (node_) node_->grad.clear();
}
Tensor Tensor::detach() const { return Tensor(shape(), node_->value); }

// ---- Tape --------------------------------------------------------------------

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tensor record_op(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                 BackwardFn backward) {
    if (!all_finite(values)) throw NumericError("non-finite value produced by operator with output shape " + shape_str(shape));
    Tensor out(std::move(shape), std::move(values));
    Tape* tape = g_active_tape;
    if (!tape) return out;
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return wants_grad(t); });
    if (!any) return out;
    if (tape->consumed_) throw StateError("tape: recording onto a consumed tape; call reset() first");
    out.node_->requires_grad = true;
    tape->entries_.push_back({out.node_, std::move(backward)});
    return out;
}

void Tape::backward(const Tensor& loss) {
    if (consumed_) throw StateError("tape: backward already ran; call reset() before reuse");
    if (loss.numel() != 1) throw DimensionError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) throw StateError("backward: loss is not connected to the tape");
    loss.node_->grad.assign(1, 1.0);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (it->output->grad.empty()) continue;
        it->backward(it->output->grad);
    }
    consumed_ = true;
}

void Tape::reset() {
    entries_.clear();
    consumed_ = false;
}

// ---- linear ------------------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b) {
    HADS_REQUIRE(W.rank() == 2, "linear: weight must be rank 2, got " + shape_str(W.shape()));
    HADS_REQUIRE(x.rank() == 1 || x.rank() == 2, "linear: input must be rank 1 or 2, got " + shape_str(x.shape()));
    const std::size_t m = W.dim(0), n = W.dim(1);
    const std::size_t rows = x.rank() == 2 ? x.dim(0) : 1;
    HADS_REQUIRE(x.shape().back() == n, shapes_msg("linear", x.shape(), W.shape()));
    if (b.defined()) HADS_REQUIRE(b.rank() == 1 && b.dim(0) == m, shapes_msg("linear bias", b.shape(), W.shape()));

    std::vector<double> wt(n * m);
    detail::transpose(m, n, W.data().data(), wt.data());
    std::vector<double> out(rows * m);
    detail::gemm(rows, m, n, x.data().data(), n, wt.data(), m, out.data(), m, false);
    if (b.defined()) {
        const auto bv = b.data();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < m; ++i) out[r * m + i] += bv[i];
    }
    Shape shape = x.rank() == 2 ? Shape{rows, m} : Shape{m};
    return record_op(std::move(shape), std::move(out), {x, W, b},
                     [x, W, b, rows, m, n](std::span<const double> g) mutable {
                         if (wants_grad(x)) {
                             auto dx = x.grad_buffer();
                             detail::gemm(rows, n, m, g.data(), m, W.data().data(), n, dx.data(), n, true);
                         }
                         if (wants_grad(W)) {
                             std::vector<double> gt(m * rows);
                             detail::transpose(rows, m, g.data(), gt.data());
                             auto dW = W.grad_buffer();
                             detail::gemm(m, n, rows, gt.data(), rows, x.data().data(), n, dW.data(), n, true);
                         }
                         if (wants_grad(b)) {
                             auto db = b.grad_buffer();
                             for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t i = 0; i < m; ++i) db[i] += g[r * m + i];
                         }
                     });
}

// ---- conv2d ------------------------------------------------------------------

namespace {

// col[(ci*9 + ky*3 + kx) * P + y*W + x] = in[ci][y+ky-1][x+kx-1] (0 outside).
void im2col3x3(const double* in, std::size_t C, std::size_t H, std::size_t W, double* col) {
    const std::size_t P = H * W;
    for (std::size_t ci = 0; ci < C; ++ci)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                double* dst = col + (ci * 9 + ky * 3 + kx) * P;
                const double* plane = in + ci * P;
                for (std::size_t y = 0; y < H; ++y) {
                    const long sy = static_cast<long>(y) + ky - 1;
                    double* row = dst + y * W;
                    if (sy < 0 || sy >= static_cast<long>(H)) {
                        std::fill(row, row + W, 0.0);
                        continue;
                    }
                    const double* src = plane + sy * W;
                    for (std::size_t x = 0; x < W; ++x) {
                        const long sx = static_cast<long>(x) + kx - 1;
                        row[x] = (sx < 0 || sx >= static_cast<long>(W)) ? 0.0 : src[sx];
                    }
                }
            }
}

void col2im3x3_add(const double* col, std::size_t C, std::size_t H, std::size_t W, double* out) {
    const std::size_t P = H * W;
    for (std::size_t ci = 0; ci < C; ++ci)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                const double* src = col + (ci * 9 + ky * 3 + kx) * P;
                double* plane = out + ci * P;
                for (std::size_t y = 0; y < H; ++y) {
                    const long sy = static_cast<long>(y) + ky - 1;
                    if (sy < 0 || sy >= static_cast<long>(H)) continue;
                    double* dst = plane + sy * W;
                    const double* row = src + y * W;
                    for (std::size_t x = 0; x < W; ++x) {
                        const long sx = static_cast<long>(x) + kx - 1;
                        if (sx >= 0 && sx < static_cast<long>(W)) dst[sx] += row[x];
                    }
                }
            }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias) {
    HADS_REQUIRE(x.rank() == 3 || x.rank() == 4, "conv2d: input must be rank 3 or 4, got " + shape_str(x.shape()));
    HADS_REQUIRE(kernels.rank() == 4 && kernels.dim(2) == 3 && kernels.dim(3) == 3,
            "conv2d: kernels must be [Cout x Cin x 3 x 3], got " + shape_str(kernels.shape()));
    const bool batched = x.rank() == 4;
    const std::size_t N = batched ? x.dim(0) : 1;
    const std::size_t Cin = x.dim(batched ? 1 : 0);
    const std::size_t H = x.dim(batched ? 2 : 1), W = x.dim(batched ? 3 : 2);
    const std::size_t Cout = kernels.dim(0);
    HADS_REQUIRE(kernels.dim(1) == Cin, "conv2d: channel mismatch, input " + shape_str(x.shape()) + " kernels " +
                                       shape_str(kernels.shape()));
    HADS_REQUIRE(bias.defined() && bias.rank() == 1 && bias.dim(0) == Cout,
            shapes_msg("conv2d bias", bias.defined() ? bias.shape() : Shape{}, kernels.shape()));

    const std::size_t P = H * W, K = Cin * 9;
    std::vector<double> out(N * Cout * P);
    std::vector<double> col(K * P);
    const auto bv = bias.data();
    for (std::size_t n = 0; n < N; ++n) {
        im2col3x3(x.data().data() + n * Cin * P, Cin, H, W, col.data());
        double* o = out.data() + n * Cout * P;
        detail::gemm(Cout, P, K, kernels.data().data(), K, col.data(), P, o, P, false);
        for (std::size_t co = 0; co < Cout; ++co)
            for (std::size_t p = 0; p < P; ++p) o[co * P + p] += bv[co];
    }
    Shape shape = batched ? Shape{N, Cout, H, W} : Shape{Cout, H, W};
    return record_op(std::move(shape), std::move(out), {x, kernels, bias},
                     [x, kernels, bias, N, Cin, Cout, H, W, P, K](std::span<const double> g) mutable {
                         std::vector<double> col(K * P), colT(P * K), dcol;
                         std::vector<double> wT;
                         const bool need_dx = wants_grad(x);
                         if (need_dx) {
                             wT.resize(K * Cout);
                             detail::transpose(Cout, K, kernels.data().data(), wT.data());
                             dcol.resize(K * P);
                         }
                         for (std::size_t n = 0; n < N; ++n) {
                             const double* gn = g.data() + n * Cout * P;
                             if (wants_grad(kernels)) {
                                 im2col3x3(x.data().data() + n * Cin * P, Cin, H, W, col.data());
                                 detail::transpose(K, P, col.data(), colT.data());
                                 auto dk = kernels.grad_buffer();
                                 detail::gemm(Cout, K, P, gn, P, colT.data(), K, dk.data(), K, true);
                             }
                             if (wants_grad(bias)) {
                                 auto db = bias.grad_buffer();
                                 for (std::size_t co = 0; co < Cout; ++co) db[co] += lane_sum(gn + co * P, P);
                             }
                             if (need_dx) {
                                 detail::gemm(K, P, Cout, wT.data(), Cout, gn, P, dcol.data(), P, false);
                                 col2im3x3_add(dcol.data(), Cin, H, W, x.grad_buffer().data() + n * Cin * P);
                             }
                         }
                     });
}

// ---- pooling -----------------------------------------------------------------

Tensor maxpool2x2(const Tensor& x) {
    HADS_REQUIRE(x.rank() == 3 || x.rank() == 4, "maxpool2x2: input must be rank 3 or 4, got " + shape_str(x.shape()));
    const std::size_t r = x.rank();
    const std::size_t H = x.dim(r - 2), W = x.dim(r - 1);
    HADS_REQUIRE(H % 2 == 0 && W % 2 == 0, "maxpool2x2: spatial extent must be even, got " + shape_str(x.shape()));
    const std::size_t planes = x.numel() / (H * W);
    const std::size_t Ho = H / 2, Wo = W / 2;
    std::vector<double> out(planes * Ho * Wo);
    std::vector<std::uint32_t> argmax(out.size());
    const auto in = x.data();
    for (std::size_t pl = 0; pl < planes; ++pl)
        for (std::size_t y = 0; y < Ho; ++y)
            for (std::size_t xx = 0; xx < Wo; ++xx) {
                const std::size_t base = pl * H * W + 2 * y * W + 2 * xx;
                const std::size_t cand[4] = {base, base + 1, base + W, base + W + 1};
                std::size_t best = cand[0];
                for (int k = 1; k < 4; ++k)
                    if (in[cand[k]] > in[best]) best = cand[k];
                const std::size_t o = (pl * Ho + y) * Wo + xx;
                out[o] = in[best];
                argmax[o] = static_cast<std::uint32_t>(best);
            }
    Shape shape = x.shape();
    shape[r - 2] = Ho;
    shape[r - 1] = Wo;
    return record_op(std::move(shape), std::move(out), {x},
                     [x, argmax = std::move(argmax)](std::span<const double> g) mutable {
                         auto dx = x.grad_buffer();
                         for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += g[o];
                     });
}

Tensor global_avg_pool(const Tensor& x) {
    HADS_REQUIRE(x.rank() == 3 || x.rank() == 4, "global_avg_pool: input must be rank 3 or 4, got " + shape_str(x.shape()));
    const std::size_t r = x.rank();
    const std::size_t P = x.dim(r - 2) * x.dim(r - 1);
    const std::size_t planes = x.numel() / P;
    std::vector<double> out(planes);
    const auto in = x.data();
    for (std::size_t pl = 0; pl < planes; ++pl) {
        double s = 0.0;
        for (std::size_t p = 0; p < P; ++p) s += in[pl * P + p];
        out[pl] = s / static_cast<double>(P);
    }
    Shape shape(x.shape().begin(), x.shape().end() - 2);
    return record_op(std::move(shape), std::move(out), {x}, [x, P, planes](std::span<const double> g) mutable {
        auto dx = x.grad_buffer();
        const double inv = 1.0 / static_cast<double>(P);
        for (std::size_t pl = 0; pl < planes; ++pl)
            for (std::size_t p = 0; p < P; ++p) dx[pl * P + p] += g[pl] * inv;
    });
}

// ---- normalization -----------------------------------------------------------

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode) {
    HADS_REQUIRE(x.rank() == 4, "batchnorm2d: input must be [N x C x H x W], got " + shape_str(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
    HADS_REQUIRE(gamma.numel() == C && beta.numel() == C, shapes_msg("batchnorm2d affine", gamma.shape(), x.shape()));
    HADS_REQUIRE(state.running_mean.size() == C && state.running_var.size() == C,
            "batchnorm2d: running statistics sized for " + std::to_string(state.running_mean.size()) +
                " channels, input has " + std::to_string(C));
    if (mode == Mode::Train && N < 2)
        throw ConfigError("batchnorm2d: train mode needs a batch of at least 2, got " + std::to_string(N));

    const std::size_t M = N * P;
    const auto in = x.data();
    const auto gv = gamma.data();
    const auto bv = beta.data();
    std::vector<double> xhat(x.numel()), out(x.numel()), invstd(C);
    for (std::size_t c = 0; c < C; ++c) {
        double mean, var;
        if (mode == Mode::Train) {
            double s = 0.0;
            for (std::size_t n = 0; n < N; ++n) s += lane_sum(in.data() + (n * C + c) * P, P);
            mean = s / static_cast<double>(M);
            double ss = 0.0;
            for (std::size_t n = 0; n < N; ++n) ss += lane_sq_dev(in.data() + (n * C + c) * P, P, mean);
            var = ss / static_cast<double>(M);
            const double unbiased = ss / static_cast<double>(M - 1);
            state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mean;
            state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
        } else {
            mean = state.running_mean[c];
            var = state.running_var[c];
        }
        invstd[c] = 1.0 / std::sqrt(var + state.eps);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t p = 0; p < P; ++p) {
                const std::size_t i = (n * C + c) * P + p;
                xhat[i] = (in[i] - mean) * invstd[c];
                out[i] = gv[c] * xhat[i] + bv[c];
            }
    }
    return record_op(x.shape(), std::move(out), {x, gamma, beta},
                     [x, gamma, beta, mode, N, C, P, M, xhat = std::move(xhat),
                      invstd = std::move(invstd)](std::span<const double> g) mutable {
                         const auto gv = gamma.data();
                         for (std::size_t c = 0; c < C; ++c) {
                             double sg = 0.0, sgx = 0.0;
                             for (std::size_t n = 0; n < N; ++n) {
                                 const std::size_t i = (n * C + c) * P;
                                 sg += lane_sum(g.data() + i, P);
                                 sgx += lane_dot(g.data() + i, xhat.data() + i, P);
                             }
                             if (wants_grad(gamma)) gamma.grad_buffer()[c] += sgx;
                             if (wants_grad(beta)) beta.grad_buffer()[c] += sg;
                             if (!wants_grad(x)) continue;
                             auto dx = x.grad_buffer();
                             const double k = gv[c] * invstd[c];
                             const double Md = static_cast<double>(M);
                             for (std::size_t n = 0; n < N; ++n)
                                 for (std::size_t p = 0; p < P; ++p) {
                                     const std::size_t i = (n * C + c) * P + p;
                                     if (mode == Mode::Train)
                                         dx[i] += k / Md * (Md * g[i] - sg - xhat[i] * sgx);
                                     else
                                         dx[i] += k * g[i];
                                 }
                         }
                     });
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    HADS_REQUIRE(x.rank() == 1 || x.rank() == 2, "layernorm: input must be rank 1 or 2, got " + shape_str(x.shape()));
    const std::size_t d = x.shape().back();
    HADS_REQUIRE(d >= 2, "layernorm: feature axis must have at least 2 entries, got " + shape_str(x.shape()));
    HADS_REQUIRE(gamma.numel() == d && beta.numel() == d, shapes_msg("layernorm affine", gamma.shape(), x.shape()));
    const std::size_t rows = x.numel() / d;
    const auto in = x.data();
    const auto gv = gamma.data();
    const auto bv = beta.data();
    std::vector<double> xhat(x.numel()), out(x.numel()), invstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in.data() + r * d;
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += row[i];
        const double mean = s / static_cast<double>(d);
        double ss = 0.0;
        for (std::size_t i = 0; i < d; ++i) ss += (row[i] - mean) * (row[i] - mean);
        invstd[r] = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
        for (std::size_t i = 0; i < d; ++i) {
            xhat[r * d + i] = (row[i] - mean) * invstd[r];
            out[r * d + i] = gv[i] * xhat[r * d + i] + bv[i];
        }
    }
    return record_op(x.shape(), std::move(out), {x, gamma, beta},
                     [x, gamma, beta, rows, d, xhat = std::move(xhat),
                      invstd = std::move(invstd)](std::span<const double> g) mutable {
                         const auto gv = gamma.data();
                         std::vector<double> gh(d);
                         for (std::size_t r = 0; r < rows; ++r) {
                             const double* gr = g.data() + r * d;
                             const double* xr = xhat.data() + r * d;
                             if (wants_grad(gamma)) {
                                 auto dg = gamma.grad_buffer();
                                 for (std::size_t i = 0; i < d; ++i) dg[i] += gr[i] * xr[i];
                             }
                             if (wants_grad(beta)) {
                                 auto db = beta.grad_buffer();
                                 for (std::size_t i = 0; i < d; ++i) db[i] += gr[i];
                             }
                             if (!wants_grad(x)) continue;
                             double s = 0.0, sx = 0.0;
                             for (std::size_t i = 0; i < d; ++i) {
                                 gh[i] = gr[i] * gv[i];
                                 s += gh[i];
                                 sx += gh[i] * xr[i];
                             }
                             auto dx = x.grad_buffer();
                             const double dd = static_cast<double>(d);
                             for (std::size_t i = 0; i < d; ++i)
                                 dx[r * d + i] += invstd[r] / dd * (dd * gh[i] - s - xr[i] * sx);
                         }
                     });
}

// ---- elementwise -------------------------------------------------------------

Tensor relu(const Tensor& x) {
    const auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
    return record_op(x.shape(), std::move(out), {x}, [x](std::span<const double> g) mutable {
        const auto in = x.data();
        auto dx = x.grad_buffer();
        for (std::size_t i = 0; i < in.size(); ++i)
            if (in[i] > 0.0) dx[i] += g[i];
    });
}

Tensor softmax(const Tensor& x) {
    const std::size_t k = x.shape().back();
    const std::size_t rows = x.numel() / k;
    const auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in.data() + r * k;
        const double mx = *std::max_element(row, row + k);
        double s = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            out[r * k + i] = std::exp(row[i] - mx);
            s += out[r * k + i];
        }
        for (std::size_t i = 0; i < k; ++i) out[r * k + i] /= s;
    }
    std::vector<double> y = out;
    return record_op(x.shape(), std::move(out), {x}, [x, rows, k, y = std::move(y)](std::span<const double> g) mutable {
        auto dx = x.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t i = 0; i < k; ++i) dot += g[r * k + i] * y[r * k + i];
            for (std::size_t i = 0; i < k; ++i) dx[r * k + i] += y[r * k + i] * (g[r * k + i] - dot);
        }
    });
}

Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: probability must lie in [0, 1), got " + std::to_string(p));
    if (mode == Mode::Eval || p == 0.0) return x;
    std::bernoulli_distribution keep(1.0 - p);
    const double s = 1.0 / (1.0 - p);
    std::vector<double> mask(x.numel());
    for (auto& m : mask) m = keep(rng) ? s : 0.0;
    const auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * mask[i];
    return record_op(x.shape(), std::move(out), {x}, [x, mask = std::move(mask)](std::span<const double> g) mutable {
        auto dx = x.grad_buffer();
        for (std::size_t i = 0; i < mask.size(); ++i) dx[i] += g[i] * mask[i];
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    HADS_REQUIRE(a.shape() == b.shape(), shapes_msg("add", a.shape(), b.shape()));
    const auto av = a.data(), bv = b.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    return record_op(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) mutable {
        if (wants_grad(a)) accumulate(a, g);
        if (wants_grad(b)) accumulate(b, g);
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    HADS_REQUIRE(a.shape() == b.shape(), shapes_msg("mul", a.shape(), b.shape()));
    const auto av = a.data(), bv = b.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    return record_op(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) mutable {
        if (wants_grad(a)) {
            auto da = a.grad_buffer();
            const auto bv = b.data();
            for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * bv[i];
        }
        if (wants_grad(b)) {
            auto db = b.grad_buffer();
            const auto av = a.data();
            for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[i] * av[i];
        }
    });
}

Tensor scale(const Tensor& x, double factor) {
    const auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * factor;
    return record_op(x.shape(), std::move(out), {x}, [x, factor](std::span<const double> g) mutable {
        auto dx = x.grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * factor;
    });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return record_op(Shape{1}, {s}, {x}, [x](std::span<const double> g) mutable {
        auto dx = x.grad_buffer();
        for (auto& v : dx) v += g[0];
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    HADS_REQUIRE(shape_numel(shape) == x.numel(), "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    std::vector<double> out(x.data().begin(), x.data().end());
    return record_op(std::move(shape), std::move(out), {x}, [x](std::span<const double> g) mutable { accumulate(x, g); });
}

// ---- attention helpers -------------------------------------------------------

Tensor head_dot(const Tensor& q, const Tensor& k, std::size_t heads) {
    HADS_REQUIRE(q.shape() == k.shape(), shapes_msg("head_dot", q.shape(), k.shape()));
    HADS_REQUIRE(q.rank() == 1 || q.rank() == 2, "head_dot: inputs must be rank 1 or 2, got " + shape_str(q.shape()));
    const std::size_t D = q.shape().back();
    HADS_REQUIRE(heads >= 1 && D % heads == 0, "head_dot: width " + std::to_string(D) + " not divisible into " +
                                              std::to_string(heads) + " heads");
    const std::size_t d = D / heads, rows = q.numel() / D;
    const auto qv = q.data(), kv = k.data();
    std::vector<double> out(rows * heads);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t h = 0; h < heads; ++h) {
            double s = 0.0;
            for (std::size_t i = 0; i < d; ++i) s += qv[r * D + h * d + i] * kv[r * D + h * d + i];
            out[r * heads + h] = s;
        }
    Shape shape = q.rank() == 2 ? Shape{rows, heads} : Shape{heads};
    return record_op(std::move(shape), std::move(out), {q, k},
                     [q, k, heads, d, rows, D](std::span<const double> g) mutable {
                         const auto qv = q.data(), kv = k.data();
                         for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t h = 0; h < heads; ++h) {
                                 const double gg = g[r * heads + h];
                                 for (std::size_t i = 0; i < d; ++i) {
                                     const std::size_t j = r * D + h * d + i;
                                     if (wants_grad(q)) q.grad_buffer()[j] += gg * kv[j];
                                     if (wants_grad(k)) k.grad_buffer()[j] += gg * qv[j];
                                 }
                             }
                     });
}

Tensor head_scale(const Tensor& w, const Tensor& v, std::size_t heads) {
    HADS_REQUIRE(v.rank() == 1 || v.rank() == 2, "head_scale: values must be rank 1 or 2, got " + shape_str(v.shape()));
    const std::size_t D = v.shape().back();
    HADS_REQUIRE(heads >= 1 && D % heads == 0, "head_scale: width " + std::to_string(D) + " not divisible into " +
                                              std::to_string(heads) + " heads");
    const std::size_t rows = v.numel() / D, d = D / heads;
    HADS_REQUIRE(w.numel() == rows * heads, shapes_msg("head_scale", w.shape(), v.shape()));
    const auto wv = w.data(), vv = v.data();
    std::vector<double> out(v.numel());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < d; ++i) out[r * D + h * d + i] = wv[r * heads + h] * vv[r * D + h * d + i];
    return record_op(v.shape(), std::move(out), {w, v}, [w, v, heads, d, rows, D](std::span<const double> g) mutable {
        const auto wv = w.data(), vv = v.data();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t h = 0; h < heads; ++h) {
                double s = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    const std::size_t j = r * D + h * d + i;
                    s += g[j] * vv[j];
                    if (wants_grad(v)) v.grad_buffer()[j] += g[j] * wv[r * heads + h];
                }
                if (wants_grad(w)) w.grad_buffer()[r * heads + h] += s;
            }
    });
}

Tensor stack_values(std::span<const Tensor> items) {
    HADS_REQUIRE(!items.empty(), "stack: no tensors given");
    const Shape& inner = items.front().shape();
    std::vector<double> out;
    out.reserve(items.size() * items.front().numel());
    for (const auto& t : items) {
        HADS_REQUIRE(t.shape() == inner, shapes_msg("stack", t.shape(), inner));
        out.insert(out.end(), t.data().begin(), t.data().end());
    }
    Shape shape{items.size()};
    shape.insert(shape.end(), inner.begin(), inner.end());
    return Tensor(std::move(shape), std::move(out));
}

// ---- verification ------------------------------------------------------------

namespace {
class NoTapeScope {
public:
    NoTapeScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
    ~NoTapeScope() { g_active_tape = previous_; }

private:
    Tape* previous_;
};
}  // namespace

double grad_check(const std::function<Tensor()>& loss_fn, Tensor x, double h, std::size_t max_coords,
                  std::uint64_t seed) {
    if (!(h > 0.0)) throw ConfigError("grad_check: step must be positive");
    const bool was = x.requires_grad();
    x.set_requires_grad(true);
    x.zero_grad();
    std::vector<double> analytic(x.numel(), 0.0);
    {
        Tape tape;
        Tensor loss;
        {
            TapeScope scope(tape);
            loss = loss_fn();
        }
        if (loss.requires_grad()) {
            tape.backward(loss);
            if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
        } else if (loss.numel() != 1) {
            throw DimensionError("grad_check: loss must be scalar, got " + shape_str(loss.shape()));
        }
    }
    x.set_requires_grad(was);

    std::vector<std::size_t> coords(x.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords != 0 && max_coords < coords.size()) {
        const auto top = static_cast<std::size_t>(
            std::max_element(analytic.begin(), analytic.end(),
                             [](double a, double b) { return std::abs(a) < std::abs(b); }) -
            analytic.begin());
        Rng rng(seed);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(max_coords - 1);
        coords.push_back(top);
    }

    NoTapeScope no_tape;
    auto values = x.mutable_data();
    double worst = 0.0;
    for (std::size_t i : coords) {
        const double saved = values[i];
        values[i] = saved + h;
        const double fp = loss_fn().item();
        values[i] = saved - h;
        const double fm = loss_fn().item();
        values[i] = saved;
        const double numeric = (fp - fm) / (2.0 * h);
        worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
    }
    return worst;
}

// ---- serialization -----------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'H', 'A', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }
std::uint32_t get_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw DataError("tensor stream: truncated header");
    return v;
}
}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
    const auto d = t.data();
    out.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
}

Tensor read_tensor(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw DataError("tensor stream: bad magic");
    const auto version = get_u32(in);
    if (version != kVersion) throw DataError("tensor stream: unsupported version " + std::to_string(version));
    const auto rank = get_u32(in);
    if (rank == 0 || rank > 8) throw DataError("tensor stream: implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) {
        e = get_u32(in);
        if (e == 0) throw DataError("tensor stream: zero extent");
    }
    std::vector<double> values(shape_numel(shape));
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) throw DataError("tensor stream: truncated payload for shape " + shape_str(shape));
    return Tensor(std::move(shape), std::move(values));
}

}  // namespace hads
