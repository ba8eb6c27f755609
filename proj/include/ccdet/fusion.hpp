#pragma once

// Per-channel patch tokenization and the fusion front-ends.
//
// Four input channels R, G, B, IR are tokenized independently into
// [H/s, W/s, d] grids. The cross-channel (cc) variant lets each channel
// attend to a complementary channel — pairs (query <- key/value):
//   R <- G,  G <- B,  B <- IR,  IR <- G
// with pre-attention layer norm on both sides, a residual branch carrying the
// raw query tokens, and no feed-forward sublayer; the four fused channels are
// concatenated in R,G,B,IR order to width 4*d, matching the tokenized input
// channel budget. Ablation baselines: plain concatenation, self-attention
// over the concatenated modalities, RGB->IR cross-attention, and the two
// single-modality front-ends.

#include <array>
#include <string>
#include <tuple>
#include <vector>

#include "ccdet/config.hpp"
#include "ccdet/nn.hpp"
#include "ccdet/tensor.hpp"

namespace ccdet {

// Tokenize an [H, W, C] image into [H/s, W/s, d] with projection
// [s*s*C, d]: each s x s patch is flattened row-major (pixel-major, channel
// minor) and projected.
template <class T>
Tensor<T> patch_tokens(const Tensor<T>& img, int s, const Tensor<T>& proj) {
    if (img.rank() != 3) throw DimensionError("patch_tokens expects [H,W,C], got " + shape_str(img.shape()));
    const int h = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
    if (s <= 0 || h % s != 0 || w % s != 0)
        throw ConfigError("image extent " + std::to_string(h) + "x" + std::to_string(w) +
                          " not divisible by patch size " + std::to_string(s));
    if (proj.rank() != 2 || proj.shape()[0] != s * s * c)
        throw DimensionError("projection must be [" + std::to_string(s * s * c) + ",d], got " +
                             shape_str(proj.shape()));
    const int gh = h / s, gw = w / s, d = proj.shape()[1];
    auto patches = reshape(transpose(reshape(img, {gh, s, gw, s * c}), 1, 2), {gh * gw, s * s * c});
    return reshape(matmul(patches, proj), {gh, gw, d});
}

template <class T>
class Fusion {
public:
    Fusion() = default;

    Fusion(ParamStore<T>& ps, const ModelConfig& cfg, FusionVariant variant)
        : variant_(variant), s_(cfg.patch_size), d_(cfg.embed_dim), gh_(cfg.grid()), gw_(cfg.grid()) {
        const int ss = s_ * s_;
        const int d = d_;
        const int heads = cfg.fusion_heads;
        switch (variant_) {
            case FusionVariant::cc:
            case FusionVariant::concat:
            case FusionVariant::rgb_only:
            case FusionVariant::ir_only: {
                const bool rgb = variant_ != FusionVariant::ir_only;
                const bool ir = variant_ != FusionVariant::rgb_only;
                if (rgb) {
                    proj_r_ = ps.xavier("fusion.proj.r", {ss, d}, ss, d);
                    proj_g_ = ps.xavier("fusion.proj.g", {ss, d}, ss, d);
                    proj_b_ = ps.xavier("fusion.proj.b", {ss, d}, ss, d);
                }
                if (ir) proj_ir_ = ps.xavier("fusion.proj.ir", {ss, d}, ss, d);
                posemb_ = ps.gaussian("fusion.posemb", {gh_, gw_, d}, 0.02);
                if (variant_ == FusionVariant::cc) {
                    const char* chans[4] = {"r", "g", "b", "ir"};
                    for (int i = 0; i < 4; ++i) {
                        const std::string p = std::string("fusion.") + chans[i];
                        ln_q_[i] = LayerNormLayer<T>(ps, p + ".ln_q", d);
                        ln_kv_[i] = LayerNormLayer<T>(ps, p + ".ln_kv", d);
                        attn_[i] = MultiHeadAttention<T>(ps, p + ".attn", d, d, d, d, heads);
                    }
                }
                out_width_ = variant_ == FusionVariant::rgb_only ? 3 * d
                             : variant_ == FusionVariant::ir_only ? d
                                                                  : 4 * d;
                break;
            }
            case FusionVariant::vanilla_self: {
                // RGB and IR each embed to width 2d; concatenation restores 4d
                proj_rgb_ = ps.xavier("fusion.proj.rgb", {3 * ss, 2 * d}, 3 * ss, 2 * d);
                proj_irm_ = ps.xavier("fusion.proj.ir", {ss, 2 * d}, ss, 2 * d);
                posemb_ = ps.gaussian("fusion.posemb", {gh_, gw_, 2 * d}, 0.02);
                ln_q_[0] = LayerNormLayer<T>(ps, "fusion.self.ln", 4 * d);
                attn_[0] = MultiHeadAttention<T>(ps, "fusion.self.attn", 4 * d, 4 * d, 4 * d, 4 * d, heads);
                out_width_ = 4 * d;
                break;
            }
            case FusionVariant::vanilla_cross: {
                // RGB embeds to 3d and queries IR (width d); raw IR tokens are
                // appended so the downstream width matches the other variants
                if ((3 * d) % heads != 0)
                    throw ConfigError("vanilla_cross width " + std::to_string(3 * d) +
                                      " not divisible by fusion_heads");
                proj_rgb_ = ps.xavier("fusion.proj.rgb", {3 * ss, 3 * d}, 3 * ss, 3 * d);
                proj_irm_ = ps.xavier("fusion.proj.ir", {ss, d}, ss, d);
                posemb_ = ps.gaussian("fusion.posemb_rgb", {gh_, gw_, 3 * d}, 0.02);
                posemb_ir_ = ps.gaussian("fusion.posemb_ir", {gh_, gw_, d}, 0.02);
                ln_q_[0] = LayerNormLayer<T>(ps, "fusion.cross.ln_q", 3 * d);
                ln_kv_[0] = LayerNormLayer<T>(ps, "fusion.cross.ln_kv", d);
                attn_[0] = MultiHeadAttention<T>(ps, "fusion.cross.attn", 3 * d, d, 3 * d, 3 * d, heads);
                out_width_ = 4 * d;
                break;
            }
        }
    }

    FusionVariant variant() const { return variant_; }
    int out_width() const { return out_width_; }

    // rgb [H,W,3], ir [H,W,1] -> fused token grid [H/s, W/s, out_width]
    Tensor<T> operator()(const Tensor<T>& rgb, const Tensor<T>& ir) const {
        switch (variant_) {
            case FusionVariant::cc: {
                auto [r, g, b, irt] = channel_grids(rgb, ir);
                return combine_cc(r, g, b, irt);
            }
            case FusionVariant::concat: {
                auto [r, g, b, irt] = channel_grids(rgb, ir);
                return concat<T>({r, g, b, irt}, 2);
            }
            case FusionVariant::rgb_only: {
                auto r = add(patch_tokens(slice(rgb, 2, 0, 1), s_, proj_r_), posemb_);
                auto g = add(patch_tokens(slice(rgb, 2, 1, 2), s_, proj_g_), posemb_);
                auto b = add(patch_tokens(slice(rgb, 2, 2, 3), s_, proj_b_), posemb_);
                return concat<T>({r, g, b}, 2);
            }
            case FusionVariant::ir_only:
                return add(patch_tokens(ir, s_, proj_ir_), posemb_);
            case FusionVariant::vanilla_self: {
                auto rgbt = add(patch_tokens(rgb, s_, proj_rgb_), posemb_);
                auto irt = add(patch_tokens(ir, s_, proj_irm_), posemb_);
                return combine_self(concat<T>({rgbt, irt}, 2));
            }
            case FusionVariant::vanilla_cross: {
                auto rgbt = add(patch_tokens(rgb, s_, proj_rgb_), posemb_);
                auto irt = add(patch_tokens(ir, s_, proj_irm_), posemb_ir_);
                return combine_cross(rgbt, irt);
            }
        }
        throw ContractError("unreachable fusion variant");
    }

    // Core cc combiner over four token grids [gh, gw, d]: per pair,
    // residual + attention(ln(query), ln(kv)); concatenated R,G,B,IR.
    Tensor<T> combine_cc(const Tensor<T>& r, const Tensor<T>& g, const Tensor<T>& b,
                         const Tensor<T>& ir) const {
        require_variant(FusionVariant::cc, "combine_cc");
        const Tensor<T>* grids[4] = {&r, &g, &b, &ir};
        for (int i = 1; i < 4; ++i)
            if (grids[i]->shape() != grids[0]->shape())
                throw DimensionError("cc fusion channel grids disagree: " + shape_str(grids[0]->shape()) +
                                     " vs " + shape_str(grids[i]->shape()));
        static constexpr int kPartner[4] = {1, 2, 3, 1};  // R<-G, G<-B, B<-IR, IR<-G
        const int gh = r.shape()[0], gw = r.shape()[1], d = r.shape()[2];
        std::vector<Tensor<T>> fused;
        for (int i = 0; i < 4; ++i) {
            auto q = reshape(*grids[i], {1, gh * gw, d});
            auto kv = reshape(*grids[kPartner[i]], {1, gh * gw, d});
            auto att = attn_[i](ln_q_[i](q), ln_kv_[i](kv));
            fused.push_back(reshape(add(q, att), {gh, gw, d}));
        }
        return concat<T>(fused, 2);
    }

    // Self-attention combiner over the concatenated modality grid [gh, gw, c].
    Tensor<T> combine_self(const Tensor<T>& tokens) const {
        require_variant(FusionVariant::vanilla_self, "combine_self");
        const int gh = tokens.shape()[0], gw = tokens.shape()[1], c = tokens.shape()[2];
        auto seq = reshape(tokens, {1, gh * gw, c});
        auto normed = ln_q_[0](seq);
        return reshape(add(seq, attn_[0](normed, normed)), {gh, gw, c});
    }

    // Cross combiner: rgb tokens [gh, gw, 3d] query ir tokens [gh, gw, d];
    // output is (rgb residual + attention) concatenated with raw ir tokens.
    Tensor<T> combine_cross(const Tensor<T>& rgb_tokens, const Tensor<T>& ir_tokens) const {
        require_variant(FusionVariant::vanilla_cross, "combine_cross");
        const int gh = rgb_tokens.shape()[0], gw = rgb_tokens.shape()[1];
        const int cq = rgb_tokens.shape()[2], ckv = ir_tokens.shape()[2];
        auto q = reshape(rgb_tokens, {1, gh * gw, cq});
        auto kv = reshape(ir_tokens, {1, gh * gw, ckv});
        auto fused = reshape(add(q, attn_[0](ln_q_[0](q), ln_kv_[0](kv))), {gh, gw, cq});
        return concat<T>({fused, ir_tokens}, 2);
    }

    // Tokenized per-channel grids (with position embedding) for cc/concat.
    std::tuple<Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>> channel_grids(const Tensor<T>& rgb,
                                                                         const Tensor<T>& ir) const {
        auto r = add(patch_tokens(slice(rgb, 2, 0, 1), s_, proj_r_), posemb_);
        auto g = add(patch_tokens(slice(rgb, 2, 1, 2), s_, proj_g_), posemb_);
        auto b = add(patch_tokens(slice(rgb, 2, 2, 3), s_, proj_b_), posemb_);
        auto irt = add(patch_tokens(ir, s_, proj_ir_), posemb_);
        return {r, g, b, irt};
    }

    void set_record_attn(bool on) {
        for (auto& a : attn_) a.record_attn = on;
    }

    // Post-softmax attention probabilities captured by the most recent forward
    // (one entry per attention unit in channel order).
    std::vector<Tensor<T>> recorded_attn() const {
        std::vector<Tensor<T>> out;
        const int n = variant_ == FusionVariant::cc ? 4 : 1;
        for (int i = 0; i < n; ++i)
            if (attn_[i].last_attn.numel() > 1 || attn_[i].last_attn.rank() > 0) out.push_back(attn_[i].last_attn);
        return out;
    }

    MultiHeadAttention<T>& attention_unit(int i) { return attn_[std::size_t(i)]; }

private:
    void require_variant(FusionVariant needed, const char* what) const {
        if (variant_ != needed)
            throw ContractError(std::string(what) + " called on fusion variant '" + to_string(variant_) + "'");
    }

    FusionVariant variant_ = FusionVariant::cc;
    int s_ = 0, d_ = 0, gh_ = 0, gw_ = 0, out_width_ = 0;
    Tensor<T> proj_r_, proj_g_, proj_b_, proj_ir_;  // [s*s, d] per channel
    Tensor<T> proj_rgb_, proj_irm_;                 // modality projections (vanilla variants)
    Tensor<T> posemb_, posemb_ir_;
    std::array<LayerNormLayer<T>, 4> ln_q_, ln_kv_;
    std::array<MultiHeadAttention<T>, 4> attn_;
};

}  // namespace ccdet
