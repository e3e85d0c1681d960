#include "hads/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "hads/edge.hpp"
#include "hads/errors.hpp"

namespace hads {

namespace {

Tensor param(Shape shape, double fill = 0.0) {
    Tensor t(std::move(shape), fill);
    t.set_requires_grad(true);
    return t;
}

std::size_t stage_params(std::size_t ci, std::size_t co) { return co * ci * 9 + co + 2 * co; }

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void append_stage(std::vector<NamedTensor>& out, const std::string& prefix, const ConvStage& st) {
    out.push_back({prefix + ".conv.weight", st.kernel});
    out.push_back({prefix + ".conv.bias", st.bias});
    out.push_back({prefix + ".bn.gamma", st.gamma});
    out.push_back({prefix + ".bn.beta", st.beta});
}

void append_dense(std::vector<NamedTensor>& out, const std::string& prefix, const Dense& d) {
    out.push_back({prefix + ".weight", d.weight});
    if (d.bias.defined()) out.push_back({prefix + ".bias", d.bias});
}

}  // namespace

ModelConfig ModelConfig::desk(int side, std::size_t texture_dim) {
    ModelConfig cfg;
    cfg.image_size = side;
    cfg.texture_dim = texture_dim;
    return cfg;
}

void ModelConfig::validate() const {
    if (image_size < 16 || image_size % 16 != 0)
        throw ConfigError("model: image_size must be a positive multiple of 16, got " + std::to_string(image_size));
    if (texture_dim < 1) throw ConfigError("model: texture_dim must be positive");
    for (auto c : backbone_channels)
        if (c < 1) throw ConfigError("model: backbone channel widths must be positive");
    if (!(dropout_fused >= 0.0 && dropout_fused < 1.0) || !(dropout_hidden >= 0.0 && dropout_hidden < 1.0))
        throw ConfigError("model: dropout rates must lie in [0, 1)");
}

ConvStage::ConvStage(std::size_t in_channels, std::size_t out_channels)
    : kernel(param({out_channels, in_channels, 3, 3})),
      bias(param({out_channels})),
      gamma(param({out_channels}, 1.0)),
      beta(param({out_channels})),
      bn(out_channels) {}

Tensor ConvStage::forward(const Tensor& x, Mode mode) {
    return maxpool2x2(relu(batchnorm2d(conv2d(x, kernel, bias), gamma, beta, bn, mode)));
}

Dense::Dense(std::size_t in, std::size_t out, bool with_bias)
    : weight(param({out, in})), bias(with_bias ? param({out}) : Tensor()) {}

TextureBackbone::TextureBackbone(const ModelConfig& cfg) {
    std::size_t in = 3;
    for (std::size_t i = 0; i < 4; ++i) {
        stages[i] = ConvStage(in, cfg.backbone_channels[i]);
        in = cfg.backbone_channels[i];
    }
    head = Dense(in, cfg.texture_dim);
}

Tensor TextureBackbone::forward(const Tensor& x, Mode mode) {
    Tensor h = x;
    for (auto& st : stages) h = st.forward(h, mode);
    return head.forward(global_avg_pool(h));
}

EdgeCNN::EdgeCNN() {
    std::size_t in = 1;
    for (std::size_t i = 0; i < 4; ++i) {
        stages[i] = ConvStage(in, kEdgeChannels[i]);
        in = kEdgeChannels[i];
    }
}

Tensor EdgeCNN::forward(const Tensor& x, Mode mode) {
    Tensor h = x;
    for (auto& st : stages) h = st.forward(h, mode);
    return global_avg_pool(h);
}

FusionBlock::FusionBlock()
    : w_q(param({kHeads * kHeadDim, kSharedDim})),
      w_k(param({kHeads * kHeadDim, kSharedDim})),
      w_v(param({kHeads * kHeadDim, kSharedDim})),
      w_o(param({kSharedDim, kHeads * kHeadDim})),
      ln_gamma(param({kSharedDim}, 1.0)),
      ln_beta(param({kSharedDim})) {}

// ---- model -------------------------------------------------------------------

HadsNetModel::HadsNetModel(const ModelConfig& cfg)
    : backbone((cfg.validate(), cfg)),
      proj_texture(cfg.texture_dim, kSharedDim),
      proj_edge(kEdgeDim, kSharedDim),
      cfg_(cfg) {
    const std::size_t have = parameter_count(), want = expected_parameter_count(cfg);
    if (have != want)
        throw StateError("model: registered " + std::to_string(have) + " parameters, expected " + std::to_string(want));
}

HadsNetModel HadsNetModel::clone() const {
    HadsNetModel copy(cfg_);
    const auto src = parameters();
    auto dst = copy.parameters();
    for (std::size_t i = 0; i < src.size(); ++i)
        std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), dst[i].tensor.mutable_data().begin());
    auto& self = const_cast<HadsNetModel&>(*this);
    auto a = self.batchnorm_states();
    auto b = copy.batchnorm_states();
    for (std::size_t i = 0; i < a.size(); ++i) *b[i].second = *a[i].second;
    return copy;
}

std::vector<NamedTensor> HadsNetModel::parameters() const {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < 4; ++i) append_stage(out, "backbone.stage" + std::to_string(i), backbone.stages[i]);
    append_dense(out, "backbone.fc", backbone.head);
    append_dense(out, "proj_texture", proj_texture);
    for (std::size_t i = 0; i < 4; ++i) append_stage(out, "edge.stage" + std::to_string(i), edge_cnn.stages[i]);
    append_dense(out, "proj_edge", proj_edge);
    out.push_back({"fusion.w_q", fusion.w_q});
    out.push_back({"fusion.w_k", fusion.w_k});
    out.push_back({"fusion.w_v", fusion.w_v});
    out.push_back({"fusion.w_o", fusion.w_o});
    out.push_back({"fusion.ln.gamma", fusion.ln_gamma});
    out.push_back({"fusion.ln.beta", fusion.ln_beta});
    append_dense(out, "head.hidden", head.hidden);
    append_dense(out, "head.out", head.out);
    return out;
}

std::vector<std::pair<std::string, BatchNormState*>> HadsNetModel::batchnorm_states() {
    std::vector<std::pair<std::string, BatchNormState*>> out;
    for (std::size_t i = 0; i < 4; ++i) out.emplace_back("backbone.stage" + std::to_string(i) + ".bn", &backbone.stages[i].bn);
    for (std::size_t i = 0; i < 4; ++i) out.emplace_back("edge.stage" + std::to_string(i) + ".bn", &edge_cnn.stages[i].bn);
    return out;
}

std::size_t HadsNetModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
}

std::size_t expected_parameter_count(const ModelConfig& cfg) {
    std::size_t n = 0, in = 3;
    for (auto c : cfg.backbone_channels) {
        n += stage_params(in, c);
        in = c;
    }
    n += in * cfg.texture_dim + cfg.texture_dim;
    n += kSharedDim * cfg.texture_dim + kSharedDim;
    in = 1;
    for (auto c : kEdgeChannels) {
        n += stage_params(in, c);
        in = c;
    }
    n += kSharedDim * kEdgeDim + kSharedDim;
    n += 4 * kSharedDim * kSharedDim + 2 * kSharedDim;
    n += kHiddenDim * kSharedDim + kHiddenDim + kNumClasses * kHiddenDim + kNumClasses;
    return n;
}

void init_parameters(HadsNetModel& model, Rng& rng) {
    for (auto& [name, t] : model.parameters()) {
        auto v = t.mutable_data();
        if (ends_with(name, ".gamma")) {
            std::fill(v.begin(), v.end(), 1.0);
        } else if (ends_with(name, ".bias") || ends_with(name, ".beta")) {
            std::fill(v.begin(), v.end(), 0.0);
        } else {
            const double fan_in = static_cast<double>(t.numel() / t.dim(0));
            std::uniform_real_distribution<double> dist(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
            for (auto& x : v) x = dist(rng);
        }
        t.zero_grad();
    }
    for (auto& [name, st] : model.batchnorm_states()) *st = BatchNormState(st->running_mean.size());
}

// ---- stream ops --------------------------------------------------------------

Tensor project_texture(const Tensor& f1, const Dense& proj) { return relu(proj.forward(f1)); }

Tensor project_edge(const Tensor& f2, const Dense& proj) { return relu(proj.forward(f2)); }

FusionResult cross_attention_fuse(const Tensor& texture, const Tensor& edge, const FusionBlock& fusion) {
    if (texture.shape() != edge.shape() || texture.shape().back() != kSharedDim)
        throw DimensionError("cross_attention_fuse: expected matching [.. x 512] inputs, got " + shape_str(texture.shape()) +
                             " and " + shape_str(edge.shape()));
    const Tensor none;
    const Tensor q = linear(texture, fusion.w_q, none);
    const Tensor k = linear(edge, fusion.w_k, none);
    const Tensor v = linear(edge, fusion.w_v, none);
    const Tensor scores = scale(head_dot(q, k, kHeads), 1.0 / std::sqrt(static_cast<double>(kHeadDim)));
    // One key per head: softmax runs over a trailing axis of extent 1.
    Shape keyed = scores.shape();
    keyed.push_back(1);
    const Tensor attention = reshape(softmax(reshape(scores, keyed)), scores.shape());
    const Tensor mixed = head_scale(attention, v, kHeads);
    const Tensor z = layernorm(add(linear(mixed, fusion.w_o, none), texture), fusion.ln_gamma, fusion.ln_beta);
    return {z, attention};
}

Tensor classify(const Tensor& z, const ClassifierHead& head, const ModelConfig& cfg, Mode mode, Rng& rng) {
    if (z.shape().back() != kSharedDim)
        throw DimensionError("classify: expected width 512, got " + shape_str(z.shape()));
    Tensor h = dropout(z, cfg.dropout_fused, mode, rng);
    h = relu(head.hidden.forward(h));
    h = dropout(h, cfg.dropout_hidden, mode, rng);
    return head.out.forward(h);
}

ModelInput prepare_input(const Image& img, const ModelConfig& cfg, Mode mode, const AugConfig& aug, Rng& rng) {
    if (img.width != cfg.image_size || img.height != cfg.image_size)
        throw DimensionError("prepare_input: image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                             ", model expects " + std::to_string(cfg.image_size));
    if (mode == Mode::Eval) return {normalize_for_backbone(img), edge_to_tensor(sobel(img), cfg.image_size)};
    const Image shared = apply_geometric(img, aug, rng);
    Tensor edges = edge_to_tensor(sobel(shared), cfg.image_size);
    return {normalize_for_backbone(apply_physics(shared, aug, rng)), std::move(edges)};
}

Tensor forward_batch(HadsNetModel& model, std::span<const ModelInput> inputs, Mode mode, Rng& rng,
                     const ForwardOptions& opts) {
    if (inputs.empty()) throw DimensionError("forward: empty batch");
    std::vector<Tensor> tex, edg;
    tex.reserve(inputs.size());
    edg.reserve(inputs.size());
    for (const auto& in : inputs) {
        tex.push_back(in.texture);
        edg.push_back(in.edges);
    }
    const Tensor f1 = project_texture(model.backbone.forward(stack_values(tex), mode), model.proj_texture);
    Tensor f2;
    if (opts.zero_edge_stream)
        f2 = Tensor(f1.shape(), 0.0);
    else
        f2 = project_edge(model.edge_cnn.forward(stack_values(edg), mode), model.proj_edge);
    const FusionResult fused = cross_attention_fuse(f1, f2, model.fusion);
    return classify(fused.fused, model.head, model.config(), mode, rng);
}

Tensor forward(HadsNetModel& model, const Image& raw, Mode mode, Rng& rng, const AugConfig& aug) {
    const Image img = resize(raw, model.config().image_size);
    const ModelInput input = prepare_input(img, model.config(), mode, aug, rng);
    return reshape(forward_batch(model, std::span<const ModelInput>(&input, 1), mode, rng), Shape{kNumClasses});
}

// ---- checkpoints -------------------------------------------------------------

namespace {
constexpr const char* kCheckpointMagic = "HADSNET-CHECKPOINT 1";

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void put_block(std::ostream& out, const std::string& name, const Tensor& t) {
    const auto len = static_cast<std::uint32_t>(name.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(name.data(), len);
    write_tensor(out, t);
}
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const HadsNetModel& model, const CheckpointMeta& meta) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path.string());
    const auto& c = model.config();
    auto& mut = const_cast<HadsNetModel&>(model);
    const auto params = model.parameters();
    const auto states = mut.batchnorm_states();
    out << kCheckpointMagic << '\n'
        << "image_size=" << c.image_size << '\n'
        << "texture_dim=" << c.texture_dim << '\n'
        << "backbone_channels=" << c.backbone_channels[0] << ',' << c.backbone_channels[1] << ','
        << c.backbone_channels[2] << ',' << c.backbone_channels[3] << '\n'
        << "dropout_fused=" << fmt_double(c.dropout_fused) << '\n'
        << "dropout_hidden=" << fmt_double(c.dropout_hidden) << '\n'
        << "seed=" << meta.seed << '\n'
        << "fold=" << meta.fold << '\n'
        << "epoch=" << meta.epoch << '\n'
        << "val_loss=" << fmt_double(meta.val_loss) << '\n'
        << "blocks=" << params.size() + 2 * states.size() << '\n'
        << "end\n";
    for (const auto& p : params) put_block(out, p.name, p.tensor);
    for (const auto& [name, st] : states) {
        const std::size_t C = st->running_mean.size();
        put_block(out, name + ".running_mean", Tensor(Shape{C}, st->running_mean));
        put_block(out, name + ".running_var", Tensor(Shape{C}, st->running_var));
    }
    if (!out) throw DataError("checkpoint write failed: " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != kCheckpointMagic) throw DataError("not a checkpoint file: " + path.string());
    std::map<std::string, std::string> kv;
    while (std::getline(in, line) && line != "end") {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError("malformed checkpoint manifest line: " + line);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto need = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw DataError(std::string("checkpoint manifest lacks ") + key + ": " + path.string());
        return it->second;
    };
    ModelConfig cfg;
    CheckpointMeta meta;
    std::size_t blocks = 0;
    try {
        cfg.image_size = std::stoi(need("image_size"));
        cfg.texture_dim = std::stoul(need("texture_dim"));
        std::istringstream chans(need("backbone_channels"));
        std::string tok;
        for (std::size_t i = 0; i < 4; ++i) {
            if (!std::getline(chans, tok, ',')) throw DataError("checkpoint: backbone_channels needs 4 entries");
            cfg.backbone_channels[i] = std::stoul(tok);
        }
        cfg.dropout_fused = std::stod(need("dropout_fused"));
        cfg.dropout_hidden = std::stod(need("dropout_hidden"));
        meta.seed = std::stoull(need("seed"));
        meta.fold = std::stoi(need("fold"));
        meta.epoch = std::stoi(need("epoch"));
        meta.val_loss = std::stod(need("val_loss"));
        blocks = std::stoul(need("blocks"));
    } catch (const std::logic_error&) {
        throw DataError("malformed checkpoint manifest: " + path.string());
    }

    HadsNetModel model(cfg);
    std::map<std::string, Tensor> read;
    for (std::size_t b = 0; b < blocks; ++b) {
        std::uint32_t len = 0;
        in.read(reinterpret_cast<char*>(&len), sizeof len);
        if (!in || len > 4096) throw DataError("checkpoint: corrupt block header in " + path.string());
        std::string name(len, '\0');
        in.read(name.data(), len);
        read[name] = read_tensor(in);
    }
    auto take = [&](const std::string& name, const Shape& shape) -> const Tensor& {
        auto it = read.find(name);
        if (it == read.end()) throw StateError("checkpoint lacks tensor " + name);
        if (it->second.shape() != shape)
            throw StateError("checkpoint tensor " + name + " has shape " + shape_str(it->second.shape()) +
                             ", model expects " + shape_str(shape));
        return it->second;
    };
    for (auto& [name, t] : model.parameters()) {
        const Tensor& src = take(name, t.shape());
        std::copy(src.data().begin(), src.data().end(), t.mutable_data().begin());
    }
    for (auto& [name, st] : model.batchnorm_states()) {
        const Shape s{st->running_mean.size()};
        const Tensor& m = take(name + ".running_mean", s);
        const Tensor& v = take(name + ".running_var", s);
        st->running_mean.assign(m.data().begin(), m.data().end());
        st->running_var.assign(v.data().begin(), v.data().end());
    }
    return {std::move(model), meta};
}

}  // namespace hads
