#pragma once

// Configuration structs mirrored 1:1 by the JSON config files. Unknown keys
// are rejected so typos fail loudly; missing keys fall back to defaults.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccdet/common.hpp"

namespace ccdet {

enum class FusionVariant { cc, concat, vanilla_self, vanilla_cross, rgb_only, ir_only };

inline const std::vector<std::pair<FusionVariant, std::string>>& fusion_variant_names() {
    static const std::vector<std::pair<FusionVariant, std::string>> table = {
        {FusionVariant::cc, "cc"},
        {FusionVariant::concat, "concat"},
        {FusionVariant::vanilla_self, "vanilla_self"},
        {FusionVariant::vanilla_cross, "vanilla_cross"},
        {FusionVariant::rgb_only, "rgb_only"},
        {FusionVariant::ir_only, "ir_only"},
    };
    return table;
}

inline std::string to_string(FusionVariant v) {
    for (const auto& [fv, name] : fusion_variant_names())
        if (fv == v) return name;
    throw ConfigError("unknown fusion variant value");
}

inline FusionVariant fusion_variant_from(const std::string& s) {
    for (const auto& [fv, name] : fusion_variant_names())
        if (name == s) return fv;
    throw ConfigError("unknown fusion variant: '" + s + "'");
}

struct Anchor {
    double w = 0, h = 0;
};

struct ModelConfig {
    int image_size = 128;
    int patch_size = 8;    // s: each channel tokenized into (H/s)x(W/s) patches
    int embed_dim = 8;     // d: per-channel token width
    int fusion_heads = 4;
    int stage_dim = 16;    // width of stage 1; stages run at dim, 2*dim, 4*dim
    std::vector<int> stage_blocks = {4, 2, 2};
    int window = 4;
    int backbone_heads = 4;
    int num_classes = 4;
    // finest-level anchor shapes (normalized); level l uses these scaled by 2^l
    std::vector<Anchor> base_anchors = {{0.03, 0.03}, {0.06, 0.05}, {0.05, 0.09}};

    int grid() const { return image_size / patch_size; }
    int anchors_per_level() const { return int(base_anchors.size()); }

    std::vector<Anchor> level_anchors(int level) const {
        std::vector<Anchor> out;
        const double k = double(1 << level);
        for (const auto& a : base_anchors) out.push_back({a.w * k, a.h * k});
        return out;
    }

    void validate() const {
        if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
            throw ConfigError("image_size must be a positive multiple of patch_size");
        if (embed_dim <= 0 || embed_dim % fusion_heads != 0)
            throw ConfigError("embed_dim must be a positive multiple of fusion_heads");
        if (stage_blocks.size() != 3) throw ConfigError("stage_blocks must list exactly 3 stages");
        for (int b : stage_blocks)
            if (b <= 0 || b % 2 != 0)
                throw ConfigError("stage block counts must be positive and even (attention blocks pair "
                                  "non-shifting with shifting)");
        for (int stage = 0; stage < 3; ++stage) {
            const int extent = grid() >> stage;
            if (extent <= 0 || extent % window != 0)
                throw ConfigError("stage " + std::to_string(stage + 1) + " grid extent " +
                                  std::to_string(extent) + " not divisible by window " + std::to_string(window));
            const int dim = stage_dim << stage;
            if (dim % backbone_heads != 0)
                throw ConfigError("stage width " + std::to_string(dim) + " not divisible by backbone_heads");
        }
        if (num_classes <= 0) throw ConfigError("num_classes must be positive");
        if (base_anchors.empty()) throw ConfigError("at least one anchor required");
        for (const auto& a : base_anchors)
            if (a.w <= 0 || a.w > 1 || a.h <= 0 || a.h > 1)
                throw ConfigError("anchor extents must lie in (0,1]");
    }
};

struct SynthConfig {
    int image_size = 128;
    int num_classes = 4;
    int objects_min = 2;
    int objects_max = 6;
    int extent_min = 5;   // object side lengths in pixels (small objects)
    int extent_max = 11;
    std::uint64_t seed = 0;
    double noise_sigma = 0.05;
    // Texture shaping. Visible channels carry weak object contrast under heavy
    // background clutter; IR carries strong contrast under mild clutter.
    double vis_lo = 0.35, vis_hi = 0.65;
    double ir_lo = 0.10, ir_hi = 0.90;
    double vis_clutter = 0.22;
    double ir_clutter = 0.06;
    // Per-image modality quality: with probability degrade_p the visible
    // channels of an image are washed out (contrast toward 0.5 scaled by
    // 1 - degrade_strength), with the same probability the IR channel is.
    // Zero (the default) keeps every image clean.
    double degrade_p = 0.0;
    double degrade_strength = 0.6;

    void validate() const {
        if (image_size <= 0) throw ConfigError("image_size must be positive");
        if (num_classes != 4) throw ConfigError("synthetic generator defines exactly 4 classes");
        if (objects_min < 0 || objects_max < objects_min) throw ConfigError("invalid objects range");
        if (extent_min <= 0 || extent_max < extent_min) throw ConfigError("invalid extent range");
        if (extent_max >= image_size / 4) throw ConfigError("object extent must stay below image_size/4");
        if (noise_sigma < 0) throw ConfigError("noise_sigma must be nonnegative");
        if (degrade_p < 0 || degrade_p > 0.5)
            throw ConfigError("degrade_p must lie in [0, 0.5] (vis and ir draws are disjoint)");
        if (degrade_strength < 0 || degrade_strength >= 1)
            throw ConfigError("degrade_strength must lie in [0, 1)");
    }
};

struct TrainConfig {
    double lr = 0.01;
    // Step schedule: after lr_decay_epoch full-rate epochs the learning rate
    // becomes lr * lr_decay. The default multiplier 1 disables it.
    double lr_decay = 1.0;
    int lr_decay_epoch = 0;
    double momentum = 0.937;
    double weight_decay = 0.0005;
    int epochs = 60;
    int batch_size = 8;
    std::uint64_t seed = 0;
    FusionVariant fusion_variant = FusionVariant::cc;
    std::vector<int> conv_ffn_stages = {1, 2};
    bool augment = true;
    ModelConfig model;

    void validate() const {
        if (lr <= 0) throw ConfigError("lr must be positive");
        if (lr_decay <= 0 || lr_decay > 1) throw ConfigError("lr_decay must lie in (0,1]");
        if (lr_decay_epoch < 0) throw ConfigError("lr_decay_epoch must be nonnegative");
        if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must lie in [0,1)");
        if (weight_decay < 0) throw ConfigError("weight_decay must be nonnegative");
        if (epochs < 0) throw ConfigError("epochs must be nonnegative");
        if (batch_size <= 0) throw ConfigError("batch_size must be positive");
        for (int s : conv_ffn_stages)
            if (s < 1 || s > 3) throw ConfigError("conv_ffn_stages entries must be in {1,2,3}");
        model.validate();
    }
};

// --- JSON (strict: unknown keys rejected) ---

namespace detail {
inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const char* where) {
    if (!j.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError(std::string(where) + ": unknown field '" + key + "'");
    }
}
}  // namespace detail

inline void to_json(nlohmann::json& j, const Anchor& a) { j = nlohmann::json::array({a.w, a.h}); }
inline void from_json(const nlohmann::json& j, Anchor& a) {
    if (!j.is_array() || j.size() != 2) throw ConfigError("anchor must be a [w,h] pair");
    a.w = j[0].get<double>();
    a.h = j[1].get<double>();
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"image_size", c.image_size},
                       {"patch_size", c.patch_size},
                       {"embed_dim", c.embed_dim},
                       {"fusion_heads", c.fusion_heads},
                       {"stage_dim", c.stage_dim},
                       {"stage_blocks", c.stage_blocks},
                       {"window", c.window},
                       {"backbone_heads", c.backbone_heads},
                       {"num_classes", c.num_classes},
                       {"base_anchors", c.base_anchors}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    detail::check_keys(j,
                       {"image_size", "patch_size", "embed_dim", "fusion_heads", "stage_dim", "stage_blocks",
                        "window", "backbone_heads", "num_classes", "base_anchors"},
                       "model config");
    c.image_size = j.value("image_size", c.image_size);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.fusion_heads = j.value("fusion_heads", c.fusion_heads);
    c.stage_dim = j.value("stage_dim", c.stage_dim);
    c.stage_blocks = j.value("stage_blocks", c.stage_blocks);
    c.window = j.value("window", c.window);
    c.backbone_heads = j.value("backbone_heads", c.backbone_heads);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.base_anchors = j.value("base_anchors", c.base_anchors);
}

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
    j = nlohmann::json{{"image_size", c.image_size}, {"num_classes", c.num_classes},
                       {"objects_min", c.objects_min}, {"objects_max", c.objects_max},
                       {"extent_min", c.extent_min},   {"extent_max", c.extent_max},
                       {"seed", c.seed},               {"noise_sigma", c.noise_sigma},
                       {"vis_lo", c.vis_lo},           {"vis_hi", c.vis_hi},
                       {"ir_lo", c.ir_lo},             {"ir_hi", c.ir_hi},
                       {"vis_clutter", c.vis_clutter}, {"ir_clutter", c.ir_clutter},
                       {"degrade_p", c.degrade_p},     {"degrade_strength", c.degrade_strength}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
    detail::check_keys(j,
                       {"image_size", "num_classes", "objects_min", "objects_max", "extent_min", "extent_max",
                        "seed", "noise_sigma", "vis_lo", "vis_hi", "ir_lo", "ir_hi", "vis_clutter",
                        "ir_clutter", "degrade_p", "degrade_strength"},
                       "synth config");
    c.image_size = j.value("image_size", c.image_size);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.objects_min = j.value("objects_min", c.objects_min);
    c.objects_max = j.value("objects_max", c.objects_max);
    c.extent_min = j.value("extent_min", c.extent_min);
    c.extent_max = j.value("extent_max", c.extent_max);
    c.seed = j.value("seed", c.seed);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.vis_lo = j.value("vis_lo", c.vis_lo);
    c.vis_hi = j.value("vis_hi", c.vis_hi);
    c.ir_lo = j.value("ir_lo", c.ir_lo);
    c.ir_hi = j.value("ir_hi", c.ir_hi);
    c.vis_clutter = j.value("vis_clutter", c.vis_clutter);
    c.ir_clutter = j.value("ir_clutter", c.ir_clutter);
    c.degrade_p = j.value("degrade_p", c.degrade_p);
    c.degrade_strength = j.value("degrade_strength", c.degrade_strength);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"lr", c.lr},
                       {"lr_decay", c.lr_decay},
                       {"lr_decay_epoch", c.lr_decay_epoch},
                       {"momentum", c.momentum},
                       {"weight_decay", c.weight_decay},
                       {"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"seed", c.seed},
                       {"fusion_variant", to_string(c.fusion_variant)},
                       {"conv_ffn_stages", c.conv_ffn_stages},
                       {"augment", c.augment},
                       {"model", c.model}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    detail::check_keys(j,
                       {"lr", "lr_decay", "lr_decay_epoch", "momentum", "weight_decay", "epochs",
                        "batch_size", "seed", "fusion_variant", "conv_ffn_stages", "augment", "model"},
                       "train config");
    c.lr = j.value("lr", c.lr);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.lr_decay_epoch = j.value("lr_decay_epoch", c.lr_decay_epoch);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    if (j.contains("fusion_variant")) c.fusion_variant = fusion_variant_from(j.at("fusion_variant").get<std::string>());
    c.conv_ffn_stages = j.value("conv_ffn_stages", c.conv_ffn_stages);
    c.augment = j.value("augment", c.augment);
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
}

}  // namespace ccdet
