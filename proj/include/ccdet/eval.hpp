#pragma once

#include <string>
#include <vector>

#include "ccdet/boxes.hpp"

namespace ccdet {

struct EvalReport {
    std::vector<std::string> class_names;   // "class0".."classN-1"
    std::vector<double> ap;                 // AP@0.5 per class; -1 when the class has no gt
    std::vector<int> gt_count, det_count;   // per class
    double map50 = 0;                       // mean AP over classes with >= 1 gt
    int total_gts = 0, total_dets = 0;

    std::string to_table() const;  // delimited text table
    std::string to_json() const;
};

// AP@iou_thresh for one class across images. Detections are matched greedily
// in global descending-score order to the unmatched gt (same image) with the
// highest IoU >= iou_thresh. All-point interpolation of the PR curve.
double average_precision(const std::vector<std::vector<Detection>>& dets_by_image,
                         const std::vector<std::vector<BoxLabel>>& gts_by_image, int class_id,
                         double iou_thresh = 0.5);

EvalReport map50(const std::vector<std::vector<Detection>>& dets_by_image,
                 const std::vector<std::vector<BoxLabel>>& gts_by_image, int num_classes);

}  // namespace ccdet
