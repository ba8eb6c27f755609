#pragma once

#include <array>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ccdet/boxes.hpp"
#include "ccdet/config.hpp"
#include "ccdet/nn.hpp"
#include "ccdet/tensor.hpp"

namespace ccdet {

// ---------------------------------------------------------------------------
// Prediction head: one linear projection per pyramid level.
// Channel layout per anchor slot: (tx, ty, tw, th, obj, class logits...).
// ---------------------------------------------------------------------------

template <typename T>
class Head {
  public:
    Head(ParamStore<T>& ps, const ModelConfig& cfg, const std::array<int, 3>& in_dims)
        : num_classes_(cfg.num_classes),
          out_channels_(cfg.anchors_per_level() * (5 + cfg.num_classes)) {
        for (int l = 0; l < 3; ++l)
            proj_.emplace_back(ps, "head.level" + std::to_string(l), in_dims[std::size_t(l)],
                               out_channels_);
    }

    std::array<Tensor<T>, 3> operator()(const std::array<Tensor<T>, 3>& pyramid) {
        return {proj_[0](pyramid[0]), proj_[1](pyramid[1]), proj_[2](pyramid[2])};
    }

    int out_channels() const { return out_channels_; }

  private:
    int num_classes_;
    int out_channels_;
    std::vector<Linear<T>> proj_;
};

// ---------------------------------------------------------------------------
// Box transform between raw offsets and normalized boxes.
//   cx = (sigmoid(tx) + i) / W,  cy = (sigmoid(ty) + j) / H
//   bw = anchor_w * exp(tw),     bh = anchor_h * exp(th)
// ---------------------------------------------------------------------------

struct RawBox {
    double tx = 0, ty = 0, tw = 0, th = 0;
};

inline double sigmoid_d(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Detection decode_box(const RawBox& t, int cell_x, int cell_y, int w_grid, int h_grid,
                            const Anchor& anchor) {
    Detection d;
    d.cx = (sigmoid_d(t.tx) + cell_x) / w_grid;
    d.cy = (sigmoid_d(t.ty) + cell_y) / h_grid;
    d.bw = anchor.w * std::exp(t.tw);
    d.bh = anchor.h * std::exp(t.th);
    d.cell_x = cell_x;
    d.cell_y = cell_y;
    return d;
}

inline RawBox encode_box(double cx, double cy, double bw, double bh, int cell_x, int cell_y,
                         int w_grid, int h_grid, const Anchor& anchor) {
    auto logit = [](double p) { return std::log(p / (1.0 - p)); };
    RawBox t;
    t.tx = logit(cx * w_grid - cell_x);
    t.ty = logit(cy * h_grid - cell_y);
    t.tw = std::log(bw / anchor.w);
    t.th = std::log(bh / anchor.h);
    return t;
}

// Decode a full raw pyramid into detections with score >= conf_thresh.
// One candidate per (cell, anchor, class); score = sigmoid(obj)*sigmoid(cls).
// Boxes are clipped to [0,1] after decoding.
template <typename T>
std::vector<Detection> decode(const std::array<Tensor<T>, 3>& raw, const ModelConfig& cfg,
                              double conf_thresh) {
    const int A = cfg.anchors_per_level(), C = cfg.num_classes, stride = 5 + C;
    std::vector<Detection> out;
    for (int l = 0; l < 3; ++l) {
        const Shape& s = raw[std::size_t(l)].shape();
        if (s.size() != 3 || s[2] != A * stride)
            throw DimensionError("decode: level " + std::to_string(l) + " raw shape " +
                                 shape_str(s) + " does not match " + std::to_string(A * stride) +
                                 " channels");
        const int H = s[0], W = s[1];
        const auto anchors = cfg.level_anchors(l);
        const auto& v = raw[std::size_t(l)].data();
        for (int j = 0; j < H; ++j)
            for (int i = 0; i < W; ++i)
                for (int a = 0; a < A; ++a) {
                    const std::size_t base = std::size_t(((j * W + i) * A + a) * stride);
                    const double obj = sigmoid_d(double(v[base + 4]));
                    RawBox t{double(v[base]), double(v[base + 1]), double(v[base + 2]),
                             double(v[base + 3])};
                    for (int c = 0; c < C; ++c) {
                        const double score = obj * sigmoid_d(double(v[base + 5 + std::size_t(c)]));
                        if (score < conf_thresh) continue;
                        Detection d = decode_box(t, i, j, W, H, anchors[std::size_t(a)]);
                        d.class_id = c;
                        d.score = score;
                        d.level = l;
                        d.anchor = a;
                        const double x1 = std::clamp(d.cx - d.bw / 2, 0.0, 1.0);
                        const double x2 = std::clamp(d.cx + d.bw / 2, 0.0, 1.0);
                        const double y1 = std::clamp(d.cy - d.bh / 2, 0.0, 1.0);
                        const double y2 = std::clamp(d.cy + d.bh / 2, 0.0, 1.0);
                        d.cx = (x1 + x2) / 2;
                        d.cy = (y1 + y2) / 2;
                        d.bw = x2 - x1;
                        d.bh = y2 - y1;
                        out.push_back(d);
                    }
                }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Target assignment: each ground truth goes to the (level, anchor) whose
// anchor shape has max IoU with the gt extent, at the gt center cell.
// Ties break toward the lower level, then the lower anchor index.
// ---------------------------------------------------------------------------

struct PositiveSlot {
    int level = 0, cell_y = 0, cell_x = 0, anchor = 0;
    int cls = 0;
    double gx = 0, gy = 0, gw = 0, gh = 0;
};

struct TargetAssignment {
    std::vector<PositiveSlot> positives;
    std::array<std::array<int, 2>, 3> level_grids{};  // {H, W} per level
    int num_classes = 0;
    int dropped = 0;  // gts that found no free slot (pathological overlap only)

    std::int64_t total_slots(int anchors_per_level) const {
        std::int64_t n = 0;
        for (const auto& g : level_grids) n += std::int64_t(g[0]) * g[1] * anchors_per_level;
        return n;
    }
};

inline double shape_iou(double w, double h, const Anchor& a) {
    const double inter = std::min(w, a.w) * std::min(h, a.h);
    return inter / (w * h + a.w * a.h - inter);
}

inline TargetAssignment assign_targets(const std::vector<BoxLabel>& gts, const ModelConfig& cfg) {
    TargetAssignment asg;
    asg.num_classes = cfg.num_classes;
    const int A = cfg.anchors_per_level();
    for (int l = 0; l < 3; ++l) {
        const int g = cfg.grid() >> l;
        asg.level_grids[std::size_t(l)] = {g, g};
    }
    std::set<std::array<int, 4>> taken;
    for (const auto& gt : gts) {
        struct Cand {
            double iou;
            int level, anchor;
        };
        std::vector<Cand> cands;
        for (int l = 0; l < 3; ++l) {
            const auto anchors = cfg.level_anchors(l);
            for (int a = 0; a < A; ++a)
                cands.push_back({shape_iou(gt.w, gt.h, anchors[std::size_t(a)]), l, a});
        }
        std::stable_sort(cands.begin(), cands.end(),
                         [](const Cand& x, const Cand& y) { return x.iou > y.iou; });
        bool placed = false;
        for (const auto& c : cands) {
            const int g = asg.level_grids[std::size_t(c.level)][0];
            const int ci = std::min(int(gt.cx * g), g - 1);
            const int cj = std::min(int(gt.cy * g), g - 1);
            if (taken.insert({c.level, cj, ci, c.anchor}).second) {
                asg.positives.push_back({c.level, cj, ci, c.anchor, gt.cls, gt.cx, gt.cy, gt.w, gt.h});
                placed = true;
                break;
            }
        }
        if (!placed) ++asg.dropped;
    }
    return asg;
}

// ---------------------------------------------------------------------------
// Detection loss.
//   loc  = mean over positives of (1 - IoU(decoded box, gt box))
//   conf = BCE on objectness over all slots (positive slots target 1)
//   cls  = BCE over class logits on positive slots (one-hot targets)
//   total = w_loc*loc + w_conf*conf + w_cls*cls
// ---------------------------------------------------------------------------

struct LossWeights {
    double loc = 0.05, conf = 1.0, cls = 0.5;
};

template <typename T>
struct LossParts {
    Tensor<T> total, loc, conf, cls;
};

template <typename T>
LossParts<T> detection_loss(const std::array<Tensor<T>, 3>& raw, const TargetAssignment& asg,
                            const ModelConfig& cfg, const LossWeights& w = {}) {
    const int A = cfg.anchors_per_level(), C = cfg.num_classes, stride = 5 + C;
    std::vector<Tensor<T>> obj_logits, obj_targets, loc_terms, cls_logits, cls_targets;
    for (int l = 0; l < 3; ++l) {
        const Shape& s = raw[std::size_t(l)].shape();
        const int H = s[0], W = s[1];
        if (s[2] != A * stride)
            throw DimensionError("detection_loss: level " + std::to_string(l) +
                                 " has channel count " + std::to_string(s[2]) + ", expected " +
                                 std::to_string(A * stride));
        auto flat = reshape(raw[std::size_t(l)], {H * W * A, stride});

        std::vector<const PositiveSlot*> pos;
        for (const auto& p : asg.positives)
            if (p.level == l) pos.push_back(&p);

        auto obj_t = Tensor<T>::zeros({H * W * A, 1});
        for (const auto* p : pos)
            obj_t.data()[std::size_t((p->cell_y * W + p->cell_x) * A + p->anchor)] = T(1);
        obj_logits.push_back(slice(flat, 1, 4, 5));
        obj_targets.push_back(obj_t);

        if (pos.empty()) continue;
        const int P = int(pos.size());
        std::vector<int> rows;
        std::vector<T> ci(std::size_t(P), T(0)), cj(std::size_t(P), T(0)), aw, ah;
        std::vector<T> g1x, g1y, g2x, g2y, garea, onehot;
        const auto anchors = cfg.level_anchors(l);
        for (const auto* p : pos) {
            rows.push_back((p->cell_y * W + p->cell_x) * A + p->anchor);
            ci[aw.size()] = T(p->cell_x);
            cj[aw.size()] = T(p->cell_y);
            aw.push_back(T(anchors[std::size_t(p->anchor)].w));
            ah.push_back(T(anchors[std::size_t(p->anchor)].h));
            g1x.push_back(T(p->gx - p->gw / 2));
            g1y.push_back(T(p->gy - p->gh / 2));
            g2x.push_back(T(p->gx + p->gw / 2));
            g2y.push_back(T(p->gy + p->gh / 2));
            garea.push_back(T(p->gw * p->gh));
            for (int c = 0; c < C; ++c) onehot.push_back(p->cls == c ? T(1) : T(0));
        }
        auto sel = gather_rows(flat, rows);  // [P, 5+C]
        auto tx = slice(sel, 1, 0, 1), ty = slice(sel, 1, 1, 2);
        auto tw = slice(sel, 1, 2, 3), th = slice(sel, 1, 3, 4);
        auto cxs = scale(add(sigmoid(tx), Tensor<T>::from({P, 1}, ci)), T(1) / T(W));
        auto cys = scale(add(sigmoid(ty), Tensor<T>::from({P, 1}, cj)), T(1) / T(H));
        auto bw = mul(Tensor<T>::from({P, 1}, aw), expo(tw));
        auto bh = mul(Tensor<T>::from({P, 1}, ah), expo(th));
        auto ax1 = sub(cxs, scale(bw, T(0.5))), ax2 = add(cxs, scale(bw, T(0.5)));
        auto ay1 = sub(cys, scale(bh, T(0.5))), ay2 = add(cys, scale(bh, T(0.5)));
        auto bx1 = Tensor<T>::from({P, 1}, g1x), bx2 = Tensor<T>::from({P, 1}, g2x);
        auto by1 = Tensor<T>::from({P, 1}, g1y), by2 = Tensor<T>::from({P, 1}, g2y);
        auto iw = clamp_min(sub(emin(ax2, bx2), emax(ax1, bx1)), T(0));
        auto ih = clamp_min(sub(emin(ay2, by2), emax(ay1, by1)), T(0));
        auto inter = mul(iw, ih);
        auto uni = clamp_min(sub(add(mul(bw, bh), Tensor<T>::from({P, 1}, garea)), inter), T(1e-12));
        loc_terms.push_back(sub(Tensor<T>::ones({P, 1}), div(inter, uni)));
        cls_logits.push_back(slice(sel, 1, 5, stride));
        cls_targets.push_back(Tensor<T>::from({P, C}, onehot));
    }

    LossParts<T> parts;
    parts.conf = mean(bce_with_logits(concat(obj_logits, 0), concat(obj_targets, 0)));
    if (loc_terms.empty()) {
        parts.loc = Tensor<T>::scalar(T(0));
        parts.cls = Tensor<T>::scalar(T(0));
    } else {
        parts.loc = mean(concat(loc_terms, 0));
        parts.cls = mean(bce_with_logits(concat(cls_logits, 0), concat(cls_targets, 0)));
    }
    parts.total = add(add(scale(parts.loc, T(w.loc)), scale(parts.conf, T(w.conf))),
                      scale(parts.cls, T(w.cls)));
    return parts;
}

// ---------------------------------------------------------------------------
// Per-class greedy non-maximum suppression. Boxes of the same class with
// IoU > iou_thresh against a kept higher-scoring box are dropped; score ties
// break toward the earlier input index. Output is grouped by ascending class,
// scores non-increasing within a class.
// ---------------------------------------------------------------------------

inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh = 0.45) {
    std::map<int, std::vector<std::size_t>> per_class;
    for (std::size_t i = 0; i < dets.size(); ++i) per_class[dets[i].class_id].push_back(i);
    std::vector<Detection> out;
    for (auto& [cls, idxs] : per_class) {
        (void)cls;
        std::stable_sort(idxs.begin(), idxs.end(), [&dets](std::size_t a, std::size_t b) {
            return dets[a].score > dets[b].score;
        });
        std::vector<bool> dead(idxs.size(), false);
        for (std::size_t k = 0; k < idxs.size(); ++k) {
            if (dead[k]) continue;
            out.push_back(dets[idxs[k]]);
            for (std::size_t m = k + 1; m < idxs.size(); ++m)
                if (!dead[m] && iou(dets[idxs[k]], dets[idxs[m]]) > iou_thresh) dead[m] = true;
        }
    }
    return out;
}

}  // namespace ccdet
