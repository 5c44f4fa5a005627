#include "finnet/metrics.hpp"

#include <algorithm>

#include "finnet/tensor.hpp"

namespace finnet {

IouSummary average_iou_summary(const std::vector<std::vector<Detection>>& detections,
                               const std::vector<std::vector<BoundingBox>>& ground_truths) {
    FN_CHECK(detections.size() == ground_truths.size(),
             "average_iou: detection and ground-truth image counts differ");
    IouSummary out;
    std::int64_t n_det = 0, n_correct = 0;
    for (size_t img = 0; img < detections.size(); ++img) {
        const auto& gts = ground_truths[img];
        std::vector<size_t> order(detections[img].size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            return detections[img][a].score() > detections[img][b].score();
        });
        std::vector<bool> taken(gts.size(), false);
        for (size_t oi : order) {
            const auto& det = detections[img][oi];
            ++n_det;
            double best_any = 0;
            int best_free = -1;
            double best_free_iou = 0;
            for (size_t g = 0; g < gts.size(); ++g) {
                double v = iou(det.box, gts[g]);
                best_any = std::max(best_any, v);
                if (!taken[g] && v > best_free_iou) {
                    best_free_iou = v;
                    best_free = static_cast<int>(g);
                }
            }
            if (best_any >= 0.5) ++n_correct;
            if (best_free >= 0 && best_free_iou > 0) {
                taken[static_cast<size_t>(best_free)] = true;
                out.matched_ious.push_back(best_free_iou);
            }
        }
    }
    if (!out.matched_ious.empty()) {
        double acc = 0;
        for (double v : out.matched_ious) acc += v;
        out.average_iou = acc / static_cast<double>(out.matched_ious.size());
    }
    if (n_det > 0) out.correctness_ratio = static_cast<double>(n_correct) / static_cast<double>(n_det);
    return out;
}

APResult average_precision_50(std::vector<std::pair<int, Detection>> detections,
                              const std::vector<std::pair<int, BoundingBox>>& ground_truths,
                              double iou_threshold) {
    APResult out;
    if (ground_truths.empty()) {
        if (!detections.empty()) out.ap = 0.0;  // every detection is a false positive
        return out;
    }
    std::stable_sort(detections.begin(), detections.end(),
                     [](const auto& a, const auto& b) { return a.second.score() > b.second.score(); });
    std::vector<bool> taken(ground_truths.size(), false);
    std::int64_t tp = 0, fp = 0;
    const double n_gt = static_cast<double>(ground_truths.size());
    std::vector<PRPoint> curve;
    for (const auto& [img, det] : detections) {
        int best = -1;
        double best_iou = iou_threshold;
        for (size_t g = 0; g < ground_truths.size(); ++g) {
            if (taken[g] || ground_truths[g].first != img) continue;
            double v = iou(det.box, ground_truths[g].second);
            if (v >= best_iou) {
                best_iou = v;
                best = static_cast<int>(g);
            }
        }
        if (best >= 0) {
            taken[static_cast<size_t>(best)] = true;
            ++tp;
        } else {
            ++fp;
        }
        curve.push_back({static_cast<double>(tp) / n_gt,
                         static_cast<double>(tp) / static_cast<double>(tp + fp), det.score()});
    }
    // all-point interpolation: area under the step curve with precision
    // replaced by the running max over recall >= r
    double ap = 0, prev_recall = 0, max_prec = 0;
    std::vector<double> interp(curve.size());
    for (size_t i = curve.size(); i-- > 0;) {
        max_prec = std::max(max_prec, curve[i].precision);
        interp[i] = max_prec;
    }
    for (size_t i = 0; i < curve.size(); ++i) {
        ap += (curve[i].recall - prev_recall) * interp[i];
        prev_recall = curve[i].recall;
    }
    out.ap = ap;
    out.curve = std::move(curve);
    return out;
}

std::vector<double> moving_average(const std::vector<double>& series, int window) {
    FN_CHECK(window >= 1, "moving_average window must be positive");
    std::vector<double> out(series.size());
    double acc = 0;
    for (size_t i = 0; i < series.size(); ++i) {
        acc += series[i];
        if (i >= static_cast<size_t>(window)) acc -= series[i - static_cast<size_t>(window)];
        out[i] = acc / static_cast<double>(std::min<size_t>(window, i + 1));
    }
    return out;
}

}  // namespace finnet
