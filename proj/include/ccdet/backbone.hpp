#pragma once

// Three-stage shifted-window transformer backbone.
//
// Each stage alternates non-shifting and shifting window-attention blocks
// (block counts are even). Non-shifting blocks may use the conv-augmented
// feed-forward (FC -> gelu -> 2x2 conv -> gelu -> FC, width unchanged);
// shifting blocks and plain configurations use FC -> gelu -> FC. Between
// stages a patch-merge halves the grid and doubles the width. The three
// stage outputs form the detection pyramid (fine to coarse).

#include <array>
#include <string>
#include <vector>

#include "ccdet/config.hpp"
#include "ccdet/nn.hpp"
#include "ccdet/tensor.hpp"

namespace ccdet {

// [H, W, c] -> [nW, w*w, c]; windows enumerated row-major, tokens within a
// window row-major.
template <class T>
Tensor<T> window_partition(const Tensor<T>& x, int w) {
    if (x.rank() != 3) throw DimensionError("window_partition expects [H,W,c], got " + shape_str(x.shape()));
    const int h = x.shape()[0], ww = x.shape()[1], c = x.shape()[2];
    if (w <= 0 || h % w != 0 || ww % w != 0)
        throw ConfigError("grid " + std::to_string(h) + "x" + std::to_string(ww) +
                          " not divisible by window " + std::to_string(w));
    return reshape(transpose(reshape(x, {h / w, w, ww / w, w * c}), 1, 2), {(h / w) * (ww / w), w * w, c});
}

template <class T>
Tensor<T> window_reverse(const Tensor<T>& x, int h, int w_grid, int w) {
    if (x.rank() != 3 || x.shape()[1] != w * w)
        throw DimensionError("window_reverse expects [nW," + std::to_string(w * w) + ",c], got " +
                             shape_str(x.shape()));
    const int c = x.shape()[2];
    if (x.shape()[0] != (h / w) * (w_grid / w)) throw DimensionError("window count mismatch in window_reverse");
    return reshape(transpose(reshape(x, {h / w, w_grid / w, w, w * c}), 1, 2), {h, w_grid, c});
}

// Post-roll region labels for the shifted window mask: rows/cols are sliced
// into [0, n-w), [n-w, n-shift), [n-shift, n) and a token's label combines its
// row and column slice. Tokens sharing a window but not a label originate
// from blocks that were not adjacent before the cyclic roll.
inline std::vector<int> shift_region_labels(int h, int w_grid, int w, int shift) {
    auto zone = [w, shift](int v, int n) {
        if (v < n - w) return 0;
        if (v < n - shift) return 1;
        return 2;
    };
    std::vector<int> labels(std::size_t(h) * w_grid);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w_grid; ++j) labels[std::size_t(i * w_grid + j)] = zone(i, h) * 3 + zone(j, w_grid);
    return labels;
}

// Additive attention mask [nW, w*w, w*w]: 0 for same-region pairs, -1e9
// otherwise. shift = 0 yields an all-zero mask.
template <class T>
Tensor<T> shifted_attention_mask(int h, int w_grid, int w, int shift) {
    const int nw = (h / w) * (w_grid / w);
    const int wsq = w * w;
    auto mask = Tensor<T>::zeros({nw, wsq, wsq});
    if (shift == 0) return mask;
    auto labels = shift_region_labels(h, w_grid, w, shift);
    for (int wy = 0; wy < h / w; ++wy)
        for (int wx = 0; wx < w_grid / w; ++wx) {
            const int widx = wy * (w_grid / w) + wx;
            std::vector<int> win(std::size_t(wsq), 0);
            for (int a = 0; a < wsq; ++a)
                win[std::size_t(a)] = labels[std::size_t((wy * w + a / w) * w_grid + wx * w + a % w)];
            for (int a = 0; a < wsq; ++a)
                for (int b = 0; b < wsq; ++b)
                    if (win[std::size_t(a)] != win[std::size_t(b)])
                        mask.data()[std::size_t((widx * wsq + a) * wsq + b)] = T(-1e9);
        }
    return mask;
}

// FC -> gelu -> [2x2 conv -> gelu ->] FC, embedding width unchanged.
template <class T>
struct FeedForward {
    Linear<T> fc1, fc2;
    bool has_conv = false;
    Tensor<T> conv_w, conv_b;

    FeedForward() = default;
    FeedForward(ParamStore<T>& ps, const std::string& prefix, int dim, bool with_conv) : has_conv(with_conv) {
        fc1 = Linear<T>(ps, prefix + ".fc1", dim, dim);
        fc2 = Linear<T>(ps, prefix + ".fc2", dim, dim);
        if (with_conv) {
            conv_w = ps.xavier(prefix + ".conv.weight", {2, 2, dim, dim}, 4 * dim, dim);
            conv_b = ps.constant(prefix + ".conv.bias", {dim}, 0.0);
        }
    }

    // x [H, W, dim] -> [H, W, dim]
    Tensor<T> operator()(const Tensor<T>& x) const {
        auto hdn = gelu(fc1(x));
        if (has_conv) hdn = gelu(conv2x2(hdn, conv_w, conv_b));
        return fc2(hdn);
    }
};

enum class BlockKind { non_shifting, shifting };

// Pre-norm windowed attention block. Shifting blocks cyclically roll the grid
// by -floor(w/2) before partitioning and mask cross-region pairs; when the
// window covers the whole grid the shift degenerates to 0 and the block is
// global attention.
template <class T>
struct SwinBlock {
    BlockKind kind = BlockKind::non_shifting;
    int grid_h = 0, grid_w = 0, window = 0, shift = 0;
    LayerNormLayer<T> ln1, ln2;
    MultiHeadAttention<T> attn;
    FeedForward<T> ffn;
    Tensor<T> mask;  // [nW, w*w, w*w], only for shift > 0

    SwinBlock() = default;
    SwinBlock(ParamStore<T>& ps, const std::string& prefix, int gh, int gw, int dim, int window_size,
              int heads, BlockKind k, bool conv_ffn)
        : kind(k), grid_h(gh), grid_w(gw), window(window_size) {
        shift = (k == BlockKind::shifting && window < std::min(gh, gw)) ? window / 2 : 0;
        ln1 = LayerNormLayer<T>(ps, prefix + ".ln1", dim);
        ln2 = LayerNormLayer<T>(ps, prefix + ".ln2", dim);
        attn = MultiHeadAttention<T>(ps, prefix + ".attn", dim, dim, dim, dim, heads);
        ffn = FeedForward<T>(ps, prefix + ".ffn", dim, conv_ffn && k == BlockKind::non_shifting);
        if (shift > 0) mask = shifted_attention_mask<T>(gh, gw, window, shift);
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        if (x.rank() != 3 || x.shape()[0] != grid_h || x.shape()[1] != grid_w)
            throw DimensionError("block expects grid [" + std::to_string(grid_h) + "," +
                                 std::to_string(grid_w) + ",dim], got " + shape_str(x.shape()));
        auto n = ln1(x);
        if (shift > 0) n = roll2d(n, -shift, -shift);
        auto wins = window_partition(n, window);
        auto att = attn(wins, wins, shift > 0 ? &mask : nullptr);
        auto m = window_reverse(att, grid_h, grid_w, window);
        if (shift > 0) m = roll2d(m, shift, shift);
        auto y = add(x, m);
        return add(y, ffn(ln2(y)));
    }
};

// 2x2 neighborhood concat (cell-row-major) -> layer norm -> linear 4c -> 2c.
template <class T>
struct PatchMerge {
    int in_dim = 0;
    LayerNormLayer<T> norm;
    Linear<T> proj;

    PatchMerge() = default;
    PatchMerge(ParamStore<T>& ps, const std::string& prefix, int c) : in_dim(c) {
        norm = LayerNormLayer<T>(ps, prefix + ".norm", 4 * c);
        proj = Linear<T>(ps, prefix + ".proj", 4 * c, 2 * c, /*bias=*/false);
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        const int h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
        if (c != in_dim) throw DimensionError("patch_merge built for width " + std::to_string(in_dim));
        if (h % 2 != 0 || w % 2 != 0)
            throw ConfigError("patch_merge needs even extents, got " + shape_str(x.shape()));
        auto grouped = reshape(transpose(reshape(x, {h / 2, 2, w / 2, 2 * c}), 1, 2), {h / 2, w / 2, 4 * c});
        return proj(norm(grouped));
    }
};

template <class T>
class Backbone {
public:
    Backbone() = default;

    // in_width: channel width of the fused token grid feeding stage 1.
    Backbone(ParamStore<T>& ps, const ModelConfig& cfg, int in_width,
             const std::vector<int>& conv_ffn_stages)
        : grid_(cfg.grid()) {
        auto conv_on = [&conv_ffn_stages](int stage) {
            for (int s : conv_ffn_stages)
                if (s == stage) return true;
            return false;
        };
        input_proj_ = Linear<T>(ps, "backbone.input_proj", in_width, cfg.stage_dim);
        for (int stage = 0; stage < 3; ++stage) {
            const int gh = grid_ >> stage;
            const int dim = cfg.stage_dim << stage;
            dims_[std::size_t(stage)] = dim;
            std::vector<SwinBlock<T>>& blocks = stages_[std::size_t(stage)];
            for (int b = 0; b < cfg.stage_blocks[std::size_t(stage)]; ++b) {
                const std::string prefix =
                    "backbone.stage" + std::to_string(stage + 1) + ".block" + std::to_string(b);
                blocks.emplace_back(ps, prefix, gh, gh, dim, cfg.window, cfg.backbone_heads,
                                    b % 2 == 0 ? BlockKind::non_shifting : BlockKind::shifting,
                                    conv_on(stage + 1));
            }
            if (stage < 2)
                merges_[std::size_t(stage)] =
                    PatchMerge<T>(ps, "backbone.merge" + std::to_string(stage + 1), dim);
        }
    }

    const std::array<int, 3>& level_dims() const { return dims_; }
    int grid() const { return grid_; }
    std::vector<SwinBlock<T>>& stage(int i) { return stages_[std::size_t(i)]; }

    // fused [grid, grid, in_width] -> {P1 [g,g,d], P2 [g/2,g/2,2d], P3 [g/4,g/4,4d]}
    std::array<Tensor<T>, 3> operator()(const Tensor<T>& fused) const {
        std::array<Tensor<T>, 3> pyramid;
        auto x = input_proj_(fused);
        for (int stage = 0; stage < 3; ++stage) {
            for (const auto& block : stages_[std::size_t(stage)]) x = block(x);
            pyramid[std::size_t(stage)] = x;
            if (stage < 2) x = merges_[std::size_t(stage)](x);
        }
        return pyramid;
    }

    void set_record_attn(bool on) {
        for (auto& st : stages_)
            for (auto& b : st) b.attn.record_attn = on;
    }

    std::vector<Tensor<T>> recorded_attn() const {
        std::vector<Tensor<T>> out;
        for (const auto& st : stages_)
            for (const auto& b : st)
                if (b.attn.last_attn.rank() > 0) out.push_back(b.attn.last_attn);
        return out;
    }

private:
    int grid_ = 0;
    Linear<T> input_proj_;
    std::array<std::vector<SwinBlock<T>>, 3> stages_;
    std::array<PatchMerge<T>, 2> merges_;
    std::array<int, 3> dims_{};
};

}  // namespace ccdet
