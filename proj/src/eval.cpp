#include "ccdet/eval.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "ccdet/common.hpp"

namespace ccdet {

double average_precision(const std::vector<std::vector<Detection>>& dets_by_image,
                         const std::vector<std::vector<BoxLabel>>& gts_by_image, int class_id,
                         double iou_thresh) {
    if (dets_by_image.size() != gts_by_image.size())
        throw ContractError("average_precision: image counts differ (" +
                            std::to_string(dets_by_image.size()) + " vs " +
                            std::to_string(gts_by_image.size()) + ")");
    struct Cand {
        double score;
        std::size_t image, index;
    };
    std::vector<Cand> cands;
    int total_gt = 0;
    for (std::size_t im = 0; im < dets_by_image.size(); ++im) {
        for (std::size_t k = 0; k < dets_by_image[im].size(); ++k)
            if (dets_by_image[im][k].class_id == class_id)
                cands.push_back({dets_by_image[im][k].score, im, k});
        for (const auto& g : gts_by_image[im])
            if (g.cls == class_id) ++total_gt;
    }
    if (total_gt == 0) return 0.0;
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Cand& a, const Cand& b) { return a.score > b.score; });

    std::vector<std::vector<bool>> gt_used(gts_by_image.size());
    for (std::size_t im = 0; im < gts_by_image.size(); ++im)
        gt_used[im].assign(gts_by_image[im].size(), false);

    std::vector<double> precision, recall;
    int tp = 0, fp = 0;
    for (const auto& c : cands) {
        const Detection& d = dets_by_image[c.image][c.index];
        const auto& gts = gts_by_image[c.image];
        double best = 0;
        int best_g = -1;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (gts[g].cls != class_id || gt_used[c.image][g]) continue;
            const double v = iou(d, gts[g]);
            if (v >= iou_thresh && v > best) {
                best = v;
                best_g = int(g);
            }
        }
        if (best_g >= 0) {
            gt_used[c.image][std::size_t(best_g)] = true;
            ++tp;
        } else {
            ++fp;
        }
        precision.push_back(double(tp) / double(tp + fp));
        recall.push_back(double(tp) / double(total_gt));
    }
    if (precision.empty()) return 0.0;

    // monotone non-increasing precision envelope, then sum over recall steps
    for (std::size_t k = precision.size() - 1; k-- > 0;)
        precision[k] = std::max(precision[k], precision[k + 1]);
    double ap = 0, prev_recall = 0;
    for (std::size_t k = 0; k < precision.size(); ++k) {
        ap += (recall[k] - prev_recall) * precision[k];
        prev_recall = recall[k];
    }
    return ap;
}

EvalReport map50(const std::vector<std::vector<Detection>>& dets_by_image,
                 const std::vector<std::vector<BoxLabel>>& gts_by_image, int num_classes) {
    EvalReport r;
    r.ap.assign(std::size_t(num_classes), -1.0);
    r.gt_count.assign(std::size_t(num_classes), 0);
    r.det_count.assign(std::size_t(num_classes), 0);
    for (int c = 0; c < num_classes; ++c) r.class_names.push_back("class" + std::to_string(c));
    for (const auto& gts : gts_by_image)
        for (const auto& g : gts)
            if (g.cls >= 0 && g.cls < num_classes) ++r.gt_count[std::size_t(g.cls)];
    for (const auto& dets : dets_by_image)
        for (const auto& d : dets)
            if (d.class_id >= 0 && d.class_id < num_classes) ++r.det_count[std::size_t(d.class_id)];

    double acc = 0;
    int counted = 0;
    for (int c = 0; c < num_classes; ++c) {
        r.total_gts += r.gt_count[std::size_t(c)];
        r.total_dets += r.det_count[std::size_t(c)];
        if (r.gt_count[std::size_t(c)] == 0) continue;
        r.ap[std::size_t(c)] = average_precision(dets_by_image, gts_by_image, c);
        acc += r.ap[std::size_t(c)];
        ++counted;
    }
    r.map50 = counted > 0 ? acc / counted : 0.0;
    return r;
}

std::string EvalReport::to_table() const {
    std::ostringstream os;
    os << "class,ap50,gts,dets\n";
    os << std::fixed << std::setprecision(6);
    for (std::size_t c = 0; c < class_names.size(); ++c) {
        os << class_names[c] << ",";
        if (ap[c] < 0)
            os << "n/a";
        else
            os << ap[c];
        os << "," << gt_count[c] << "," << det_count[c] << "\n";
    }
    os << "mAP50," << map50 << "," << total_gts << "," << total_dets << "\n";
    return os.str();
}

std::string EvalReport::to_json() const {
    nlohmann::ordered_json j;
    nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
    for (std::size_t c = 0; c < class_names.size(); ++c) {
        nlohmann::ordered_json e;
        e["ap50"] = ap[c] < 0 ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(ap[c]);
        e["gts"] = gt_count[c];
        e["dets"] = det_count[c];
        per_class[class_names[c]] = e;
    }
    j["per_class"] = per_class;
    j["mAP50"] = map50;
    j["total_gts"] = total_gts;
    j["total_dets"] = total_dets;
    return j.dump(2);
}

}  // namespace ccdet
