#pragma once

#include <array>

#include "ccdet/backbone.hpp"
#include "ccdet/config.hpp"
#include "ccdet/fusion.hpp"
#include "ccdet/head.hpp"
#include "ccdet/nn.hpp"

namespace ccdet {

// Full detector: fusion front-end -> windowed transformer backbone -> head.
// All parameters live in the owned store under deterministic per-name seeds.
template <typename T>
class Model {
  public:
    explicit Model(const TrainConfig& cfg)
        : cfg_((cfg.validate(), cfg)),
          ps_(cfg.seed),
          fusion_(ps_, cfg.model, cfg.fusion_variant),
          backbone_(ps_, cfg.model, fusion_.out_width(), cfg.conv_ffn_stages),
          head_(ps_, cfg.model, backbone_.level_dims()) {}

    // rgb [H,W,3], ir [H,W] or [H,W,1] -> raw prediction pyramid
    std::array<Tensor<T>, 3> operator()(const Tensor<T>& rgb, Tensor<T> ir) {
        if (ir.rank() == 2) ir = reshape(ir, {ir.shape()[0], ir.shape()[1], 1});
        return head_(backbone_(fusion_(rgb, ir)));
    }

    ParamStore<T>& params() { return ps_; }
    const TrainConfig& config() const { return cfg_; }
    Fusion<T>& fusion() { return fusion_; }
    Backbone<T>& backbone() { return backbone_; }
    Head<T>& head() { return head_; }

  private:
    TrainConfig cfg_;
    ParamStore<T> ps_;
    Fusion<T> fusion_;
    Backbone<T> backbone_;
    Head<T> head_;
};

}  // namespace ccdet
