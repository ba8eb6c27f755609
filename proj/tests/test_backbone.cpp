#include <doctest.h>

#include <cmath>
#include <vector>

#include "ccdet/backbone.hpp"

using namespace ccdet;
using TD = Tensor<double>;

namespace {

ModelConfig small_cfg() {
    // grid 8 -> stages at 8, 4, 2 with window 2
    ModelConfig cfg;
    cfg.image_size = 32;
    cfg.patch_size = 4;
    cfg.embed_dim = 2;
    cfg.fusion_heads = 2;
    cfg.stage_dim = 4;
    cfg.stage_blocks = {2, 2, 2};
    cfg.window = 2;
    cfg.backbone_heads = 2;
    return cfg;
}

// Independent region id: after rolling by -shift, a token at post-roll (i,j)
// came from pre-roll ((i+shift) mod n); it crossed the image edge iff
// i >= n - shift. Same-region pairs share both row and column wrap status.
int wrap_region(int i, int j, int h, int w_grid, int shift) {
    return 2 * (i >= h - shift ? 1 : 0) + (j >= w_grid - shift ? 1 : 0);
}

}  // namespace

TEST_CASE("window_partition: whole-grid window keeps row-major token order") {
    std::vector<double> v(16);
    for (int i = 0; i < 16; ++i) v[std::size_t(i)] = i;
    auto x = TD::from({4, 4, 1}, v);
    auto wins = window_partition(x, 4);
    REQUIRE(wins.shape() == Shape{1, 16, 1});
    CHECK(wins.data() == v);
}

TEST_CASE("window_partition: 4x4 with window 2 places token (0,3) in window 1 slot 1") {
    std::vector<double> v(16);
    for (int i = 0; i < 16; ++i) v[std::size_t(i)] = i;
    auto wins = window_partition(TD::from({4, 4, 1}, v), 2);
    REQUIRE(wins.shape() == Shape{4, 4, 1});
    // token (0,3) has value 3; window 1 covers rows 0-1, cols 2-3; slot 1 = local (0,1)
    CHECK(wins.data()[std::size_t(1 * 4 + 1)] == 3.0);
    // full expected layout of window 0: (0,0),(0,1),(1,0),(1,1)
    CHECK(wins.data()[0] == 0.0);
    CHECK(wins.data()[1] == 1.0);
    CHECK(wins.data()[2] == 4.0);
    CHECK(wins.data()[3] == 5.0);
}

TEST_CASE("window partition/reverse round-trip is bitwise identity") {
    RngStream rng(3);
    for (int w : {2, 4}) {
        auto x = TD::uniform({8, 4, 3}, rng);
        auto back = window_reverse(window_partition(x, w), 8, 4, w);
        CHECK(back.data() == x.data());
    }
}

TEST_CASE("shifted mask: zero shift is all zeros") {
    auto m = shifted_attention_mask<double>(4, 4, 2, 0);
    REQUIRE(m.shape() == Shape{4, 4, 4});
    for (double v : m.data()) CHECK(v == 0.0);
}

TEST_CASE("shifted mask: 4x4 w=2 shift=1 corner window mixes four regions") {
    auto m = shifted_attention_mask<double>(4, 4, 2, 1);
    // corner window index 3: each token its own region -> zeros exactly on the diagonal
    int zeros = 0;
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
            double v = m.data()[std::size_t((3 * 4 + a) * 4 + b)];
            if (v == 0.0) {
                ++zeros;
                CHECK(a == b);
            } else {
                CHECK(v == -1e9);
            }
        }
    CHECK(zeros == 4);
}

TEST_CASE("shifted mask: every row allows self-attention") {
    for (int grid : {4, 6, 8}) {
        for (int w : {2}) {
            auto m = shifted_attention_mask<double>(grid, grid, w, w / 2);
            const int nw = (grid / w) * (grid / w), wsq = w * w;
            for (int wi = 0; wi < nw; ++wi)
                for (int a = 0; a < wsq; ++a) {
                    bool has_zero = false;
                    for (int b = 0; b < wsq; ++b)
                        has_zero = has_zero || m.data()[std::size_t((wi * wsq + a) * wsq + b)] == 0.0;
                    CHECK(has_zero);
                    CHECK(m.data()[std::size_t((wi * wsq + a) * wsq + a)] == 0.0);
                }
        }
    }
}

TEST_CASE("shifted mask matches the brute-force roll-and-label oracle") {
    for (int grid : {4, 6, 8}) {
        for (int w : {2, 4}) {
            if (grid % w != 0 || w >= grid) continue;
            const int shift = w / 2;
            auto m = shifted_attention_mask<double>(grid, grid, w, shift);
            const int wsq = w * w;
            for (int wy = 0; wy < grid / w; ++wy)
                for (int wx = 0; wx < grid / w; ++wx) {
                    const int widx = wy * (grid / w) + wx;
                    for (int a = 0; a < wsq; ++a)
                        for (int b = 0; b < wsq; ++b) {
                            const int ia = wy * w + a / w, ja = wx * w + a % w;
                            const int ib = wy * w + b / w, jb = wx * w + b % w;
                            const bool same = wrap_region(ia, ja, grid, grid, shift) ==
                                              wrap_region(ib, jb, grid, grid, shift);
                            const double v = m.data()[std::size_t((widx * wsq + a) * wsq + b)];
                            INFO("grid ", grid, " w ", w, " window ", widx, " pair ", a, ",", b);
                            CHECK(v == (same ? 0.0 : -1e9));
                        }
                }
        }
    }
}

TEST_CASE("conv ffn: zero input with zero biases stays zero") {
    ParamStore<double> ps(1);
    FeedForward<double> ffn(ps, "f", 4, true);
    auto out = ffn(TD::zeros({3, 3, 4}));
    for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("conv ffn: identity weights compose to gelu of gelu") {
    ParamStore<double> ps(2);
    FeedForward<double> ffn(ps, "f", 3, true);
    auto eye = [](int n) {
        auto t = TD::zeros({n, n});
        for (int i = 0; i < n; ++i) t.data()[std::size_t(i * n + i)] = 1.0;
        return t;
    };
    ffn.fc1.w = eye(3);
    ffn.fc2.w = eye(3);
    ffn.conv_w = TD::zeros({2, 2, 3, 3});
    for (int c = 0; c < 3; ++c) ffn.conv_w.data()[std::size_t(c * 3 + c)] = 1.0;  // identity tap
    RngStream rng(5);
    auto x = TD::uniform({2, 2, 3}, rng);
    auto out = ffn(x);
    auto ref = gelu(gelu(x));
    for (std::size_t i = 0; i < out.data().size(); ++i)
        CHECK(out.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
}

TEST_CASE("conv ffn and plain ffn differ by exactly 4*dim^2 + dim parameters") {
    for (int dim : {4, 8, 16}) {
        ParamStore<double> with_conv(1), without(1);
        FeedForward<double> a(with_conv, "f", dim, true);
        FeedForward<double> b(without, "f", dim, false);
        CHECK(with_conv.total_params() - without.total_params() == 4 * dim * dim + dim);
    }
}

TEST_CASE("swin block: zero output projections make the block an identity") {
    ParamStore<double> ps(3);
    SwinBlock<double> block(ps, "b", 4, 4, 4, 2, 2, BlockKind::shifting, false);
    std::fill(block.attn.wo.data().begin(), block.attn.wo.data().end(), 0.0);
    std::fill(block.ffn.fc2.w.data().begin(), block.ffn.fc2.w.data().end(), 0.0);
    RngStream rng(4);
    auto x = TD::uniform({4, 4, 4}, rng);
    auto out = block(x);
    for (std::size_t i = 0; i < x.data().size(); ++i) CHECK(out.data()[i] == x.data()[i]);
}

TEST_CASE("swin block: whole-grid window equals an independently composed global block") {
    ParamStore<double> ps(6);
    // shifting kind with window == grid: shift degenerates to 0
    SwinBlock<double> block(ps, "b", 4, 4, 6, 4, 3, BlockKind::shifting, false);
    CHECK(block.shift == 0);
    RngStream rng(7);
    auto x = TD::uniform({4, 4, 6}, rng);
    auto out = block(x);

    // oracle: plain pre-norm transformer encoder over the 16-token sequence
    auto seq = reshape(x, {1, 16, 6});
    auto n1 = layer_norm(seq, ps.at("b.ln1.gamma"), ps.at("b.ln1.beta"));
    auto att = block.attn(n1, n1);
    auto y = add(seq, att);
    auto n2 = layer_norm(y, ps.at("b.ln2.gamma"), ps.at("b.ln2.beta"));
    auto h = gelu(block.ffn.fc1(n2));
    auto ref = add(y, block.ffn.fc2(h));
    double worst = 0;
    for (std::size_t i = 0; i < out.data().size(); ++i)
        worst = std::max(worst, std::abs(out.data()[i] - ref.data()[i]));
    CHECK(worst < 1e-5);
}

TEST_CASE("swin block: shifted attention leaves no mass across oracle regions") {
    ParamStore<double> ps(8);
    SwinBlock<double> block(ps, "b", 8, 8, 4, 4, 2, BlockKind::shifting, false);
    REQUIRE(block.shift == 2);
    block.attn.record_attn = true;
    RngStream rng(9);
    block(TD::uniform({8, 8, 4}, rng));
    auto attn = block.attn.last_attn;  // [nW, h, 16, 16]
    REQUIRE(attn.shape() == Shape{4, 2, 16, 16});
    for (int wy = 0; wy < 2; ++wy)
        for (int wx = 0; wx < 2; ++wx) {
            const int widx = wy * 2 + wx;
            for (int h = 0; h < 2; ++h)
                for (int a = 0; a < 16; ++a) {
                    double cross = 0;
                    for (int b = 0; b < 16; ++b) {
                        const int ia = wy * 4 + a / 4, ja = wx * 4 + a % 4;
                        const int ib = wy * 4 + b / 4, jb = wx * 4 + b % 4;
                        if (wrap_region(ia, ja, 8, 8, 2) != wrap_region(ib, jb, 8, 8, 2))
                            cross += attn.data()[std::size_t(((widx * 2 + h) * 16 + a) * 16 + b)];
                    }
                    CHECK(cross < 1e-6);
                }
        }
}

TEST_CASE("patch merge: shape, constant preservation, and cell order") {
    ParamStore<double> ps(10);
    PatchMerge<double> merge(ps, "m", 3);
    auto out = merge(TD::full({2, 2, 3}, 1.5));
    REQUIRE(out.shape() == Shape{1, 1, 6});
    for (double v : out.data()) CHECK(v == doctest::Approx(out.data()[0]).epsilon(1e-12));

    // cell gathering order: (2i,2j), (2i,2j+1), (2i+1,2j), (2i+1,2j+1)
    std::vector<double> v(16);
    for (int i = 0; i < 16; ++i) v[std::size_t(i)] = i;
    auto grouped = reshape(transpose(reshape(TD::from({4, 4, 1}, v), {2, 2, 2, 2}), 1, 2), {2, 2, 4});
    CHECK(grouped.data() == std::vector<double>{0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15});
}

TEST_CASE("backbone: pyramid extents halve and widths double") {
    ModelConfig cfg;
    cfg.image_size = 512;
    cfg.patch_size = 8;  // 64x64 token grid
    cfg.embed_dim = 2;
    cfg.fusion_heads = 2;
    cfg.stage_dim = 8;
    cfg.stage_blocks = {2, 2, 2};
    cfg.window = 4;
    cfg.backbone_heads = 2;
    cfg.validate();
    ParamStore<double> ps(11);
    Backbone<double> bb(ps, cfg, 8, {1, 2});
    RngStream rng(12);
    auto fused = TD::uniform({64, 64, 8}, rng);
    auto pyramid = bb(fused);
    CHECK(pyramid[0].shape() == Shape{64, 64, 8});
    CHECK(pyramid[1].shape() == Shape{32, 32, 16});
    CHECK(pyramid[2].shape() == Shape{16, 16, 32});
}

TEST_CASE("backbone: attention rows sum to 1 in every block") {
    auto cfg = small_cfg();
    ParamStore<double> ps(13);
    Backbone<double> bb(ps, cfg, 8, {1, 2});
    bb.set_record_attn(true);
    RngStream rng(14);
    bb(TD::uniform({8, 8, 8}, rng));
    auto all = bb.recorded_attn();
    CHECK(all.size() == 6u);
    for (const auto& attn : all) {
        const int cols = attn.shape().back();
        const int rows = int(attn.numel()) / cols;
        for (int r = 0; r < rows; ++r) {
            double acc = 0;
            for (int c = 0; c < cols; ++c) acc += attn.data()[std::size_t(r * cols + c)];
            CHECK(std::abs(acc - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("backbone: conv ffn placement changes parameter count by the exact per-block delta") {
    auto cfg = small_cfg();
    auto count = [&cfg](std::vector<int> stages) {
        ParamStore<double> ps(1);
        Backbone<double> bb(ps, cfg, 8, stages);
        return ps.total_params();
    };
    const std::int64_t none = count({});
    // stages hold 2 blocks each -> 1 non-shifting block per stage gets the conv
    auto delta = [](int dim) { return std::int64_t(4) * dim * dim + dim; };
    CHECK(count({1}) - none == delta(4));
    CHECK(count({1, 2}) - none == delta(4) + delta(8));
    CHECK(count({1, 2, 3}) - none == delta(4) + delta(8) + delta(16));
}

TEST_CASE("swin blocks and patch merge pass finite-difference checks") {
    for (std::uint64_t seed : {21ull, 22ull}) {
        ParamStore<double> ps(seed);
        SwinBlock<double> ns(ps, "ns", 4, 4, 4, 2, 2, BlockKind::non_shifting, true);
        SwinBlock<double> sh(ps, "sh", 4, 4, 4, 2, 2, BlockKind::shifting, false);
        PatchMerge<double> pm(ps, "pm", 4);
        RngStream rng(seed * 3 + 1);
        auto x = TD::uniform({4, 4, 4}, rng);
        auto w1 = TD::uniform({4, 4, 4}, rng);
        auto w2 = TD::uniform({2, 2, 8}, rng);

        double e1 = finite_diff_check<double>(
            [&](const std::vector<TD>& in) { return mean(mul(ns(in[0]), w1)); },
            {x, ps.at("ns.attn.wq"), ps.at("ns.ffn.conv.weight"), ps.at("ns.ln1.gamma")});
        CHECK(e1 < 1e-4);

        double e2 = finite_diff_check<double>(
            [&](const std::vector<TD>& in) { return mean(mul(sh(in[0]), w1)); },
            {x, ps.at("sh.attn.wv"), ps.at("sh.ffn.fc1.weight"), ps.at("sh.ln2.beta")});
        CHECK(e2 < 1e-4);

        double e3 = finite_diff_check<double>(
            [&](const std::vector<TD>& in) { return mean(mul(pm(in[0]), w2)); },
            {x, ps.at("pm.proj.weight"), ps.at("pm.norm.gamma")});
        CHECK(e3 < 1e-4);
    }
}

TEST_CASE("full backbone passes a finite-difference spot check") {
    auto cfg = small_cfg();
    ParamStore<double> ps(31);
    Backbone<double> bb(ps, cfg, 6, {1, 2});
    RngStream rng(32);
    auto fused = TD::uniform({8, 8, 6}, rng);
    auto wa = TD::uniform({8, 8, 4}, rng);
    auto wb = TD::uniform({2, 2, 16}, rng);
    double err = finite_diff_check<double>(
        [&](const std::vector<TD>& in) {
            auto p = bb(in[0]);
            return add(mean(mul(p[0], wa)), mean(mul(p[2], wb)));
        },
        {fused, ps.at("backbone.input_proj.weight"), ps.at("backbone.stage1.block0.ffn.conv.weight"),
         ps.at("backbone.stage2.block1.attn.wk"), ps.at("backbone.merge1.proj.weight")});
    CHECK(err < 1e-4);
}
