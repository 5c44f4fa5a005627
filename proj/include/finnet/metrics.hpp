#ifndef FINNET_METRICS_HPP
#define FINNET_METRICS_HPP

#include <optional>
#include <utility>
#include <vector>

#include "finnet/boxes.hpp"

namespace finnet {

struct PRPoint {
    double recall = 0, precision = 0, score_threshold = 0;
};

/// Matched-IoU statistics over a set of images.
struct IouSummary {
    std::optional<double> average_iou;        // mean over greedy best-IoU matched pairs
    std::optional<double> correctness_ratio;  // detections whose best ground-truth IoU >= 0.5
    std::vector<double> matched_ious;         // raw distribution of matched-pair IoUs
};

IouSummary average_iou_summary(const std::vector<std::vector<Detection>>& detections,
                               const std::vector<std::vector<BoundingBox>>& ground_truths);

struct APResult {
    std::optional<double> ap;  // empty when undefined (no ground truth, no detections)
    std::vector<PRPoint> curve;
};

/// AP at IoU >= 0.5, all-point interpolation. Detections and ground truths
/// carry the index of the image they belong to.
APResult average_precision_50(std::vector<std::pair<int, Detection>> detections,
                              const std::vector<std::pair<int, BoundingBox>>& ground_truths,
                              double iou_threshold = 0.5);

/// Trailing mean over min(window, index+1) values; length-preserving.
std::vector<double> moving_average(const std::vector<double>& series, int window);

}  // namespace finnet

#endif
