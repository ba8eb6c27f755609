#pragma once

// Finite-difference verification for every differentiable operation, run in
// 64-bit. Each functional reduces the op's output through a fixed random
// weighting so no gradient direction cancels out of the scalar loss.

#include <string>
#include <vector>

#include "ccdet/backbone.hpp"
#include "ccdet/fusion.hpp"
#include "ccdet/head.hpp"

namespace ccdet {

struct GradCheckResult {
    std::string op;
    double max_err = 0;     // worst relative error across all seeds and entries
    double tolerance = 0;
    bool pass = false;
};

namespace gradcheck_detail {

using D = double;

inline Tensor<D> rand_t(Shape shape, RngStream& rng, double scale = 1.0) {
    return Tensor<D>::randn(std::move(shape), rng, scale);
}

// loss = sum(w ⊙ t) with w drawn once per functional from U(0.5, 1.5)
inline Tensor<D> wsum(const Tensor<D>& t, RngStream& rng) {
    auto w = Tensor<D>::uniform(t.shape(), rng, 0.5, 1.5);
    return sum(mul(t, w));
}

using Fn = std::function<Tensor<D>(const std::vector<Tensor<D>>&)>;

inline double check_matmul(std::uint64_t seed) {
    RngStream rng(seed);
    auto a = rand_t({3, 4}, rng), b = rand_t({4, 5}, rng);
    auto w = Tensor<D>::uniform({3, 5}, rng, 0.5, 1.5);
    Fn f = [&](const std::vector<Tensor<D>>&) { return sum(mul(matmul(a, b), w)); };
    return finite_diff_check<D>(f, {a, b});
}

inline double check_softmax(std::uint64_t seed) {
    RngStream rng(seed);
    auto x = rand_t({3, 7}, rng);
    auto w = Tensor<D>::uniform({3, 7}, rng, 0.5, 1.5);
    Fn f = [&](const std::vector<Tensor<D>>&) { return sum(mul(softmax(x, 1), w)); };
    return finite_diff_check<D>(f, {x});
}

inline double check_layer_norm(std::uint64_t seed) {
    RngStream rng(seed);
    auto x = rand_t({4, 6}, rng);
    auto gamma = Tensor<D>::uniform({6}, rng, 0.5, 1.5);
    auto beta = rand_t({6}, rng, 0.3);
    auto w = Tensor<D>::uniform({4, 6}, rng, 0.5, 1.5);
    Fn f = [&](const std::vector<Tensor<D>>&) { return sum(mul(layer_norm(x, gamma, beta), w)); };
    return finite_diff_check<D>(f, {x, gamma, beta});
}

inline double check_conv2x2(std::uint64_t seed) {
    RngStream rng(seed);
    auto x = rand_t({5, 6, 3}, rng);
    auto kernel = rand_t({2, 2, 3, 4}, rng, 0.5);
    auto bias = rand_t({4}, rng, 0.3);
    auto w = Tensor<D>::uniform({5, 6, 4}, rng, 0.5, 1.5);
    Fn f = [&](const std::vector<Tensor<D>>&) { return sum(mul(conv2x2(x, kernel, bias), w)); };
    return finite_diff_check<D>(f, {x, kernel, bias});
}

inline double check_gelu(std::uint64_t seed) {
    RngStream rng(seed);
    auto x = rand_t({11}, rng);
    auto w = Tensor<D>::uniform({11}, rng, 0.5, 1.5);
    Fn f = [&](const std::vector<Tensor<D>>&) { return sum(mul(gelu(x), w)); };
    return finite_diff_check<D>(f, {x});
}

inline double check_mha_cross(std::uint64_t seed) {
    RngStream rng(seed);
    ParamStore<D> ps(seed);
    MultiHeadAttention<D> attn(ps, "op", /*q_dim=*/6, /*kv_dim=*/4, /*inner=*/6, /*out=*/6,
                               /*heads=*/2);
    auto q = rand_t({2, 5, 6}, rng), kv = rand_t({2, 3, 4}, rng);
    auto w = Tensor<D>::uniform({2, 5, 6}, rng, 0.5, 1.5);
    Fn f = [&](const std::vector<Tensor<D>>&) { return sum(mul(attn(q, kv), w)); };
    return finite_diff_check<D>(f, {q, kv, attn.wq, attn.wk, attn.wv, attn.wo});
}

inline double check_cc_fusion(std::uint64_t seed) {
    RngStream rng(seed);
    ParamStore<D> ps(seed);
    ModelConfig cfg;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.embed_dim = 4;
    cfg.fusion_heads = 2;
    Fusion<D> fusion(ps, cfg, FusionVariant::cc);
    auto rgb = rand_t({8, 8, 3}, rng), ir = rand_t({8, 8, 1}, rng);
    auto w = Tensor<D>::uniform({2, 2, fusion.out_width()}, rng, 0.5, 1.5);
    Fn f = [&](const std::vector<Tensor<D>>&) { return sum(mul(fusion(rgb, ir), w)); };
    return finite_diff_check<D>(
        f, {rgb, ir, ps.at("fusion.proj.r"), ps.at("fusion.proj.ir"), ps.at("fusion.posemb"),
            ps.at("fusion.r.attn.wq"), ps.at("fusion.b.attn.wo"), ps.at("fusion.g.ln_kv.gamma")});
}

inline double check_conv_ffn(std::uint64_t seed) {
    RngStream rng(seed);
    ParamStore<D> ps(seed);
    FeedForward<D> ffn(ps, "op", /*dim=*/4, /*with_conv=*/true);
    auto x = rand_t({3, 5, 4}, rng);
    auto w = Tensor<D>::uniform({3, 5, 4}, rng, 0.5, 1.5);
    Fn f = [&](const std::vector<Tensor<D>>&) { return sum(mul(ffn(x), w)); };
    return finite_diff_check<D>(f, {x, ffn.fc1.w, ffn.fc1.b, ffn.conv_w, ffn.conv_b, ffn.fc2.w});
}

inline double check_swin_block(std::uint64_t seed) {
    RngStream rng(seed);
    ParamStore<D> ps(seed);
    SwinBlock<D> blk(ps, "op", /*gh=*/4, /*gw=*/4, /*dim=*/4, /*window=*/2, /*heads=*/2,
                     BlockKind::shifting, /*conv_ffn=*/false);
    auto x = rand_t({4, 4, 4}, rng);
    auto w = Tensor<D>::uniform({4, 4, 4}, rng, 0.5, 1.5);
    Fn f = [&](const std::vector<Tensor<D>>&) { return sum(mul(blk(x), w)); };
    return finite_diff_check<D>(
        f, {x, blk.attn.wq, blk.attn.wv, blk.attn.wo, blk.ln1.gamma, blk.ln2.beta, blk.ffn.fc1.w});
}

inline double check_patch_merge(std::uint64_t seed) {
    RngStream rng(seed);
    ParamStore<D> ps(seed);
    PatchMerge<D> pm(ps, "op", /*c=*/3);
    auto x = rand_t({4, 4, 3}, rng);
    auto w = Tensor<D>::uniform({2, 2, 6}, rng, 0.5, 1.5);
    Fn f = [&](const std::vector<Tensor<D>>&) { return sum(mul(pm(x), w)); };
    return finite_diff_check<D>(f, {x, pm.norm.gamma, pm.norm.beta, pm.proj.w});
}

inline double check_detection_loss(std::uint64_t seed) {
    RngStream rng(seed);
    ModelConfig cfg;
    cfg.image_size = 32;
    cfg.patch_size = 8;  // level grids 4 / 2 / 1
    const int ch = cfg.anchors_per_level() * (5 + cfg.num_classes);
    std::array<Tensor<D>, 3> raw = {rand_t({4, 4, ch}, rng, 0.5), rand_t({2, 2, ch}, rng, 0.5),
                                    rand_t({1, 1, ch}, rng, 0.5)};
    std::vector<BoxLabel> gts = {
        {0, 0.3 + 0.02 * rng.uniform(-1, 1), 0.4 + 0.02 * rng.uniform(-1, 1), 0.08, 0.06},
        {2, 0.7 + 0.02 * rng.uniform(-1, 1), 0.6 + 0.02 * rng.uniform(-1, 1), 0.12, 0.2},
    };
    auto asg = assign_targets(gts, cfg);
    Fn f = [&](const std::vector<Tensor<D>>&) { return detection_loss(raw, asg, cfg).total; };
    return finite_diff_check<D>(f, {raw[0], raw[1], raw[2]});
}

}  // namespace gradcheck_detail

// Runs each functional over `seeds` seeds and reports the worst relative
// error per operation against a 1e-4 tolerance.
inline std::vector<GradCheckResult> run_gradcheck(int seeds = 10, std::uint64_t base_seed = 20240501) {
    namespace gd = gradcheck_detail;
    const std::vector<std::pair<std::string, double (*)(std::uint64_t)>> ops = {
        {"matmul", gd::check_matmul},
        {"softmax", gd::check_softmax},
        {"layer_norm", gd::check_layer_norm},
        {"conv2x2", gd::check_conv2x2},
        {"gelu", gd::check_gelu},
        {"mha_cross", gd::check_mha_cross},
        {"cc_fusion", gd::check_cc_fusion},
        {"conv_ffn", gd::check_conv_ffn},
        {"swin_block", gd::check_swin_block},
        {"patch_merge", gd::check_patch_merge},
        {"detection_loss", gd::check_detection_loss},
    };
    std::vector<GradCheckResult> results;
    for (const auto& [name, fn] : ops) {
        GradCheckResult r;
        r.op = name;
        r.tolerance = 1e-4;
        for (int s = 0; s < seeds; ++s)
            r.max_err = std::max(r.max_err, fn(base_seed + std::uint64_t(s)));
        r.pass = r.max_err < r.tolerance;
        results.push_back(r);
    }
    return results;
}

}  // namespace ccdet
