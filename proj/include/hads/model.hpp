#pragma once

// Dual-stream classifier: a texture CNN over the normalized image, an edge CNN
// over its Sobel map, single-vector multi-head cross-attention fusion in which
// the texture projection queries the edge projection, and a two-layer MLP head.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hads/augment.hpp"
#include "hads/image.hpp"
#include "hads/rng.hpp"
#include "hads/tensor.hpp"

namespace hads {

inline constexpr std::size_t kSharedDim = 512;
inline constexpr std::size_t kHeads = 8;
inline constexpr std::size_t kHeadDim = 64;
inline constexpr std::size_t kEdgeDim = 256;
inline constexpr std::size_t kHiddenDim = 256;
inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<std::size_t, 4> kEdgeChannels{32, 64, 128, 256};

struct ModelConfig {
    int image_size = 224;
    std::size_t texture_dim = 1536;  // D1
    std::array<std::size_t, 4> backbone_channels{16, 32, 64, 128};
    double dropout_fused = 0.4;
    double dropout_hidden = 0.2;

    static ModelConfig full() { return ModelConfig{}; }
    static ModelConfig desk(int side = 64, std::size_t texture_dim = 256);
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

/// conv3x3 -> batchnorm -> ReLU -> maxpool2x2
struct ConvStage {
    Tensor kernel;  // [Cout x Cin x 3 x 3]
    Tensor bias;
    Tensor gamma;
    Tensor beta;
    BatchNormState bn;

    ConvStage() = default;
    ConvStage(std::size_t in_channels, std::size_t out_channels);
    Tensor forward(const Tensor& x, Mode mode);
};

struct Dense {
    Tensor weight;  // [out x in]
    Tensor bias;    // [out], undefined when bias-free

    Dense() = default;
    Dense(std::size_t in, std::size_t out, bool with_bias = true);
    Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
};

struct TextureBackbone {
    std::array<ConvStage, 4> stages;
    Dense head;  // GAP width -> D1

    explicit TextureBackbone(const ModelConfig& cfg);
    TextureBackbone() = default;
    Tensor forward(const Tensor& x, Mode mode);  // [N x 3 x S x S] -> [N x D1]
};

struct EdgeCNN {
    std::array<ConvStage, 4> stages;

    EdgeCNN();
    Tensor forward(const Tensor& x, Mode mode);  // [N x 1 x S x S] -> [N x 256]
};

/// Per-head projections are stored stacked: rows [64h, 64h + 64) of w_q, w_k
/// and w_v belong to head h.
struct FusionBlock {
    Tensor w_q, w_k, w_v;  // [512 x 512], bias-free
    Tensor w_o;            // [512 x 512], bias-free
    Tensor ln_gamma, ln_beta;

    FusionBlock();
};

struct ClassifierHead {
    Dense hidden;  // 512 -> 256
    Dense out;     // 256 -> 3

    ClassifierHead() : hidden(kSharedDim, kHiddenDim), out(kHiddenDim, kNumClasses) {}
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

class HadsNetModel {
public:
    explicit HadsNetModel(const ModelConfig& cfg);
    HadsNetModel(HadsNetModel&&) = default;
    HadsNetModel& operator=(HadsNetModel&&) = default;
    HadsNetModel(const HadsNetModel&) = delete;
    HadsNetModel& operator=(const HadsNetModel&) = delete;

    /// Deep copy of parameters and running statistics.
    HadsNetModel clone() const;

    const ModelConfig& config() const { return cfg_; }
    /// Trainable tensors in a fixed order with stable names.
    std::vector<NamedTensor> parameters() const;
    /// Batch-norm running statistics, keyed by stage name.
    std::vector<std::pair<std::string, BatchNormState*>> batchnorm_states();
    std::size_t parameter_count() const;

    TextureBackbone backbone;
    Dense proj_texture;  // D1 -> 512
    EdgeCNN edge_cnn;
    Dense proj_edge;  // 256 -> 512
    FusionBlock fusion;
    ClassifierHead head;

private:
    ModelConfig cfg_;
};

/// Closed-form trainable parameter count for a configuration.
std::size_t expected_parameter_count(const ModelConfig& cfg);

/// Kaiming-uniform (bound sqrt(6 / fan_in)) weights, zero biases, unit
/// normalization gains, zero shifts, fresh running statistics.
void init_parameters(HadsNetModel& model, Rng& rng);

Tensor project_texture(const Tensor& f1, const Dense& proj);
Tensor project_edge(const Tensor& f2, const Dense& proj);

struct FusionResult {
    Tensor fused;      // z, [B x 512] or [512]
    Tensor attention;  // softmax weights, [B x 8] or [8]
};

FusionResult cross_attention_fuse(const Tensor& texture, const Tensor& edge, const FusionBlock& fusion);

/// Returns logits (no softmax).
Tensor classify(const Tensor& z, const ClassifierHead& head, const ModelConfig& cfg, Mode mode, Rng& rng);

struct ForwardOptions {
    /// Replaces the projected edge features with zeros (stream ablation).
    bool zero_edge_stream = false;
};

/// Network inputs for one image: the normalized texture view and the edge view.
struct ModelInput {
    Tensor texture;  // [3 x S x S]
    Tensor edges;    // [1 x S x S]
};

/// Train: geometric augmentation on the shared image, Sobel on the result,
/// physics augmentation on the texture view only. Eval: no augmentation.
/// `img` must already be at model resolution.
ModelInput prepare_input(const Image& img, const ModelConfig& cfg, Mode mode, const AugConfig& aug, Rng& rng);

/// Batched forward over prepared inputs; returns [B x 3] logits.
Tensor forward_batch(HadsNetModel& model, std::span<const ModelInput> inputs, Mode mode, Rng& rng,
                     const ForwardOptions& opts = {});

/// Single-image forward (resized to model resolution first); returns [3]
/// logits. Train mode is rejected by batch normalization (batch of one).
Tensor forward(HadsNetModel& model, const Image& raw, Mode mode, Rng& rng, const AugConfig& aug = {});

// ---- checkpoints -------------------------------------------------------------

struct CheckpointMeta {
    std::uint64_t seed = 0;
    int fold = 0;
    int epoch = 0;
    double val_loss = 0.0;
};

/// Text manifest followed by named tensor blocks in the tensor stream format.
void save_checkpoint(const std::filesystem::path& path, const HadsNetModel& model, const CheckpointMeta& meta);

struct LoadedCheckpoint {
    HadsNetModel model;
    CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hads
