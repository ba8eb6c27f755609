#pragma once

#include <algorithm>
#include <cmath>

namespace ccdet {

// Ground-truth object: normalized center-form box plus class id.
struct BoxLabel {
    int cls = 0;
    double cx = 0, cy = 0, w = 0, h = 0;
};

// Decoded prediction. The slot fields record where the detection came from so
// its raw offsets can be reconstructed exactly.
struct Detection {
    int class_id = 0;
    double score = 0;
    double cx = 0, cy = 0, bw = 0, bh = 0;
    int level = -1, cell_x = -1, cell_y = -1, anchor = -1;
};

inline double iou_corners(double ax1, double ay1, double ax2, double ay2,
                          double bx1, double by1, double bx2, double by2) {
    const double iw = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
    const double ih = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
    const double inter = iw * ih;
    const double uni = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
    return uni <= 0 ? 0.0 : inter / uni;
}

inline double iou_center(double acx, double acy, double aw, double ah,
                         double bcx, double bcy, double bw, double bh) {
    return iou_corners(acx - aw / 2, acy - ah / 2, acx + aw / 2, acy + ah / 2,
                       bcx - bw / 2, bcy - bh / 2, bcx + bw / 2, bcy + bh / 2);
}

inline double iou(const Detection& a, const Detection& b) {
    return iou_center(a.cx, a.cy, a.bw, a.bh, b.cx, b.cy, b.bw, b.bh);
}

inline double iou(const Detection& a, const BoxLabel& b) {
    return iou_center(a.cx, a.cy, a.bw, a.bh, b.cx, b.cy, b.w, b.h);
}

inline double iou(const BoxLabel& a, const BoxLabel& b) {
    return iou_center(a.cx, a.cy, a.w, a.h, b.cx, b.cy, b.w, b.h);
}

}  // namespace ccdet
