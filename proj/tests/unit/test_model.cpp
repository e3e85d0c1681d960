#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "hads/errors.hpp"
#include "hads/edge.hpp"
#include "hads/model.hpp"
#include "support.hpp"

using namespace hads;
using testing::probe_sum;
using testing::random_tensor;

namespace {

HadsNetModel make_model(const ModelConfig& cfg, std::uint64_t seed) {
    HadsNetModel m(cfg);
    Rng rng(seed);
    init_parameters(m, rng);
    return m;
}

Image textured(int side, std::uint64_t seed) {
    Rng rng(seed);
    Image img(side, side);
    for (auto& v : img.pixels) v = std::floor(uniform(rng, 20.0, 230.0));
    return img;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.numel(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("parameter count matches the layer-by-layer sum") {
    // conv weight + conv bias + BN gamma/beta per stage
    auto stage = [](std::size_t ci, std::size_t co) { return co * ci * 9 + co + 2 * co; };
    for (std::size_t d1 : {64u, 256u, 1536u}) {
        ModelConfig cfg = ModelConfig::desk(64, d1);
        std::size_t n = stage(3, 16) + stage(16, 32) + stage(32, 64) + stage(64, 128);
        n += 128 * d1 + d1;                                                   // backbone head
        n += 512 * d1 + 512;                                                  // texture projection
        n += stage(1, 32) + stage(32, 64) + stage(64, 128) + stage(128, 256);  // edge CNN
        n += 512 * 256 + 512;                                                 // edge projection
        n += 4 * 512 * 512 + 2 * 512;                                         // W_Q, W_K, W_V, W_O, layernorm
        n += 512 * 256 + 256 + 256 * 3 + 3;                                   // head
        CHECK(expected_parameter_count(cfg) == n);
        CHECK(HadsNetModel(cfg).parameter_count() == n);
    }
}

TEST_CASE("parameters are registered once with unique names") {
    HadsNetModel m(ModelConfig::desk(32, 64));
    auto ps = m.parameters();
    for (std::size_t i = 0; i < ps.size(); ++i)
        for (std::size_t j = i + 1; j < ps.size(); ++j) {
            CHECK(ps[i].name != ps[j].name);
            CHECK_FALSE(ps[i].tensor.same_node(ps[j].tensor));
        }
    for (const auto& p : ps) CHECK(p.tensor.requires_grad());
}

TEST_CASE("model config validation") {
    ModelConfig cfg = ModelConfig::desk(40, 64);
    CHECK_THROWS_AS(HadsNetModel{cfg}, ConfigError);
    cfg = ModelConfig::desk(32, 64);
    cfg.dropout_fused = 1.0;
    CHECK_THROWS_AS(HadsNetModel{cfg}, ConfigError);
}

TEST_CASE("init_parameters") {
    HadsNetModel a = make_model(ModelConfig::desk(32, 64), 5);
    HadsNetModel b = make_model(ModelConfig::desk(32, 64), 5);
    auto pa = a.parameters(), pb = b.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(bit_equal(pa[i].tensor, pb[i].tensor));
        const auto& n = pa[i].name;
        if (n.ends_with(".bias") || n.ends_with(".beta"))
            for (double v : pa[i].tensor.data()) CHECK(v == 0.0);
        if (n.ends_with(".gamma"))
            for (double v : pa[i].tensor.data()) CHECK(v == 1.0);
    }
    // U(-b, b) with b = sqrt(6 / fan_in) has variance b^2 / 3 = 2 / fan_in
    for (const Tensor* t : {&a.fusion.w_q, &a.fusion.w_o, &a.head.hidden.weight, &a.edge_cnn.stages[3].kernel}) {
        const double fan_in = static_cast<double>(t->numel() / t->dim(0));
        double s = 0, ss = 0;
        for (double v : t->data()) {
            s += v;
            ss += v * v;
        }
        const double n = static_cast<double>(t->numel());
        const double var = ss / n - (s / n) * (s / n);
        CHECK(std::abs(var / (2.0 / fan_in) - 1.0) < 0.2);
    }
}

TEST_CASE("stream projections") {
    Dense zero(64, 512);
    auto out = project_texture(random_tensor({64}, 1), zero);
    CHECK(out.shape() == Shape{512});
    for (double v : out.data()) CHECK(v == 0.0);

    HadsNetModel m = make_model(ModelConfig::desk(32, 64), 2);
    Rng rng(3);
    bool nonneg = true;
    for (int t = 0; t < 1000; ++t) {
        auto f1 = random_tensor({64}, 100 + t, -3.0, 3.0);
        for (double v : project_texture(f1, m.proj_texture).data()) nonneg = nonneg && v >= 0.0;
        auto f2 = random_tensor({256}, 5000 + t, -3.0, 3.0);
        for (double v : project_edge(f2, m.proj_edge).data()) nonneg = nonneg && v >= 0.0;
    }
    CHECK(nonneg);

    auto f1 = random_tensor({64}, 7);
    auto g = [&] { return probe_sum(project_texture(f1, m.proj_texture)); };
    CHECK(grad_check(g, f1) < 1e-5);
    CHECK(grad_check(g, m.proj_texture.weight, 1e-5, 400, 1) < 1e-5);
    CHECK(grad_check(g, m.proj_texture.bias) < 1e-5);
    auto f2 = random_tensor({256}, 8);
    auto h = [&] { return probe_sum(project_edge(f2, m.proj_edge)); };
    CHECK(grad_check(h, f2) < 1e-5);
    CHECK(grad_check(h, m.proj_edge.bias) < 1e-5);

    CHECK_THROWS_AS(project_texture(random_tensor({65}, 9), m.proj_texture), DimensionError);
}

TEST_CASE("single-key attention: weights are exactly one") {
    HadsNetModel m = make_model(ModelConfig::desk(32, 64), 4);
    for (std::uint64_t s = 0; s < 20; ++s) {
        auto t = relu(random_tensor({3, 512}, 10 + s, -2.0, 2.0));
        auto e = relu(random_tensor({3, 512}, 40 + s, -2.0, 2.0));
        auto r = cross_attention_fuse(t, e, m.fusion);
        CHECK(r.attention.shape() == Shape{3, 8});
        for (double w : r.attention.data()) CHECK(w == 1.0);
    }
}

TEST_CASE("fused output ignores W_Q and W_K") {
    HadsNetModel m = make_model(ModelConfig::desk(32, 64), 6);
    auto t = relu(random_tensor({512}, 11));
    auto e = relu(random_tensor({512}, 12));
    const Tensor before = cross_attention_fuse(t, e, m.fusion).fused;
    Rng rng(13);
    for (auto& v : m.fusion.w_q.mutable_data()) v += uniform(rng, -5.0, 5.0);
    for (auto& v : m.fusion.w_k.mutable_data()) v *= -3.0;
    const Tensor after = cross_attention_fuse(t, e, m.fusion).fused;
    CHECK(bit_equal(before, after));

    // and matches layernorm(W_O concat_h(W_V^(h) f2) + f1) computed directly
    const Tensor none;
    const Tensor direct = layernorm(add(linear(linear(e, m.fusion.w_v, none), m.fusion.w_o, none), t),
                                    m.fusion.ln_gamma, m.fusion.ln_beta);
    for (std::size_t i = 0; i < 512; ++i) CHECK(after[i] == doctest::Approx(direct[i]).epsilon(1e-12));

    // no gradient reaches W_Q or W_K
    Tape tape;
    Tensor loss;
    {
        TapeScope scope(tape);
        loss = probe_sum(cross_attention_fuse(t, e, m.fusion).fused);
    }
    tape.backward(loss);
    for (const Tensor* w : {&m.fusion.w_q, &m.fusion.w_k}) {
        double mx = 0.0;
        if (w->has_grad())
            for (double g : w->grad()) mx = std::max(mx, std::abs(g));
        CHECK(mx == 0.0);
    }
}

TEST_CASE("zero edge features leave the residual path") {
    HadsNetModel m = make_model(ModelConfig::desk(32, 64), 7);
    auto t = relu(random_tensor({512}, 14));
    const Tensor z = cross_attention_fuse(t, Tensor({512}, 0.0), m.fusion).fused;
    const Tensor ref = layernorm(t, m.fusion.ln_gamma, m.fusion.ln_beta);
    CHECK(bit_equal(z, ref));
}

TEST_CASE("classify") {
    ModelConfig cfg = ModelConfig::desk(32, 64);
    ClassifierHead head;
    Rng rng(1);
    auto z = random_tensor({512}, 15);
    auto logits = classify(z, head, cfg, Mode::Eval, rng);
    CHECK(logits.shape() == Shape{3});
    for (double v : logits.data()) CHECK(v == 0.0);

    HadsNetModel m = make_model(cfg, 8);
    CHECK(bit_equal(classify(z, m.head, cfg, Mode::Eval, rng), classify(z, m.head, cfg, Mode::Eval, rng)));

    // train mode with a fixed dropout mask per evaluation
    auto f = [&] {
        Rng r(77);
        return probe_sum(classify(z, m.head, cfg, Mode::Train, r));
    };
    CHECK(grad_check(f, z) < 1e-4);
    CHECK(grad_check(f, m.head.hidden.weight, 1e-5, 300, 2) < 1e-4);
    CHECK(grad_check(f, m.head.out.weight) < 1e-4);
    CHECK(grad_check(f, m.head.out.bias) < 1e-4);

    CHECK_THROWS_AS(classify(random_tensor({256}, 16), m.head, cfg, Mode::Eval, rng), DimensionError);
}

TEST_CASE("edge CNN output is 256 wide at any valid resolution") {
    EdgeCNN e;
    Rng rng(9);
    for (std::size_t s : {16u, 32u, 48u}) {
        auto out = e.forward(random_tensor({2, 1, s, s}, s), Mode::Train);
        CHECK(out.shape() == Shape{2, 256});
    }
}

TEST_CASE("forward: eval determinism and degenerate input") {
    HadsNetModel m = make_model(ModelConfig::desk(32, 64), 10);
    Rng rng(1);
    Image img = textured(32, 17);
    auto a = forward(m, img, Mode::Eval, rng);
    auto b = forward(m, img, Mode::Eval, rng);
    CHECK(a.shape() == Shape{3});
    CHECK(bit_equal(a, b));

    auto c = forward(m, Image(32, 32, 128.0), Mode::Eval, rng);
    for (double v : c.data()) CHECK(std::isfinite(v));

    // larger inputs are resized to the model resolution first
    auto d = forward(m, textured(50, 18), Mode::Eval, rng);
    CHECK(d.shape() == Shape{3});

    CHECK_THROWS_AS(forward(m, img, Mode::Train, rng), ConfigError);
}

TEST_CASE("prepare_input") {
    ModelConfig cfg = ModelConfig::desk(32, 64);
    Image img = textured(32, 19);
    Rng rng(2);
    auto in = prepare_input(img, cfg, Mode::Eval, AugConfig::for_size(32), rng);
    CHECK(in.texture.shape() == Shape{3, 32, 32});
    CHECK(in.edges.shape() == Shape{1, 32, 32});
    CHECK(bit_equal(in.texture, normalize_for_backbone(img)));

    // eval mode draws nothing and runs no physics augmentation
    const auto calls = physics_invocation_count();
    Rng r1(3), r2(3);
    prepare_input(img, cfg, Mode::Eval, AugConfig::for_size(32), r1);
    CHECK(physics_invocation_count() == calls);
    CHECK(r1() == r2());

    // train mode: the edge view comes from the geometrically augmented image
    // before any physics augmentation
    AugConfig aug = AugConfig::for_size(32);
    Rng t1(4), t2(4);
    auto tr = prepare_input(img, cfg, Mode::Train, aug, t1);
    const Image shared = apply_geometric(img, aug, t2);
    CHECK(bit_equal(tr.edges, edge_to_tensor(sobel(shared), 32)));
    CHECK(physics_invocation_count() == calls + 1);

    CHECK_THROWS_AS(prepare_input(textured(30, 1), cfg, Mode::Eval, aug, rng), DimensionError);
}

TEST_CASE("forward_batch: stream ablation replaces edge features") {
    HadsNetModel m = make_model(ModelConfig::desk(32, 64), 11);
    std::vector<ModelInput> in;
    Rng rng(5);
    for (int i = 0; i < 3; ++i)
        in.push_back(prepare_input(textured(32, 30 + i), m.config(), Mode::Eval, AugConfig::for_size(32), rng));
    auto full = forward_batch(m, in, Mode::Eval, rng);
    auto ablated = forward_batch(m, in, Mode::Eval, rng, ForwardOptions{true});
    CHECK(full.shape() == Shape{3, 3});
    CHECK_FALSE(bit_equal(full, ablated));

    // ablated logits equal classify(layernorm(f1_hat))
    const Tensor f1 = project_texture(m.backbone.forward(stack_values(std::vector<Tensor>{in[0].texture, in[1].texture, in[2].texture}), Mode::Eval), m.proj_texture);
    const Tensor z = layernorm(f1, m.fusion.ln_gamma, m.fusion.ln_beta);
    CHECK(bit_equal(ablated, classify(z, m.head, m.config(), Mode::Eval, rng)));
}

TEST_CASE("checkpoint round trip is bit-exact") {
    const auto dir = std::filesystem::temp_directory_path() / "hads_model_ckpt";
    std::filesystem::create_directories(dir);
    HadsNetModel m = make_model(ModelConfig::desk(32, 64), 12);
    m.backbone.stages[1].bn.running_mean[3] = 0.123456789;
    m.edge_cnn.stages[2].bn.running_var[0] = 2.5;
    save_checkpoint(dir / "a.ckpt", m, CheckpointMeta{99, 3, 7, 0.0693});
    auto loaded = load_checkpoint(dir / "a.ckpt");
    CHECK(loaded.meta.seed == 99);
    CHECK(loaded.meta.fold == 3);
    CHECK(loaded.meta.epoch == 7);
    CHECK(loaded.meta.val_loss == 0.0693);
    CHECK(loaded.model.config() == m.config());
    auto pa = m.parameters(), pb = loaded.model.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(bit_equal(pa[i].tensor, pb[i].tensor));
    CHECK(loaded.model.backbone.stages[1].bn.running_mean[3] == 0.123456789);
    CHECK(loaded.model.edge_cnn.stages[2].bn.running_var[0] == 2.5);

    // saving the loaded model reproduces the file byte for byte
    save_checkpoint(dir / "b.ckpt", loaded.model, loaded.meta);
    auto slurp = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));

    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), DataError);
    std::ofstream(dir / "junk.ckpt") << "not a checkpoint\n";
    CHECK_THROWS(load_checkpoint(dir / "junk.ckpt"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("clone is deep") {
    HadsNetModel m = make_model(ModelConfig::desk(32, 64), 13);
    HadsNetModel c = m.clone();
    c.head.out.bias.mutable_data()[0] = 42.0;
    c.backbone.stages[0].bn.running_mean[0] = 9.0;
    CHECK(m.head.out.bias[0] == 0.0);
    CHECK(m.backbone.stages[0].bn.running_mean[0] == 0.0);
    CHECK(bit_equal(m.fusion.w_v, c.fusion.w_v));
}

}  // TEST_SUITE
