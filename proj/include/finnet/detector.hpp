#ifndef FINNET_DETECTOR_HPP
#define FINNET_DETECTOR_HPP

#include <optional>

#include "finnet/boxes.hpp"
#include "finnet/checkpoint.hpp"
#include "finnet/dataset.hpp"
#include "finnet/metrics.hpp"
#include "finnet/network.hpp"

namespace finnet {

struct Anchor {
    double width = 0, height = 0;
};

/// The nine default bounding-box priors at the 608x608 input scale.
std::vector<Anchor> default_anchors();

struct DetectorTrainConfig {
    int batch_size = 64;
    int subdivisions = 8;
    int burn_in_iterations = 4000;
    double burn_in_lr = 0.00025;
    double base_lr = 0.001;  // burn-in rate is this reduced by a factor of 0.25
    int total_iterations = 50000;
    int input_size = 608;
    int eval_interval = 100;
    double conf_threshold = 0.25;
    double nms_threshold = 0.45;
    double eval_conf_threshold = 0.05;
    double obj_weight = 1.0, box_weight = 1.0, cls_weight = 1.0;
    std::vector<Anchor> anchors;
    DetectorPreset preset = DetectorPreset::Tiny;
    std::uint64_t seed = 0;
    std::optional<double> early_stop_map;  // stop once validation mAP reaches this

    void validate() const;
};

// ---------------------------------------------------------------------------
// decode / suppression

/// Decodes one raw grid {A*(5+C),H,W} (optionally with a leading batch-1
/// axis). Boxes are clamped to the network input frame.
std::vector<Detection> decode_predictions(const Tensor& raw_grid, const std::vector<Anchor>& anchors,
                                          int grid_stride, double conf_threshold);

/// Greedy score-descending suppression; survivors ordered by score.
std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold);

// ---------------------------------------------------------------------------
// target assignment / loss

struct DetectionTargets {
    Tensor target;    // {1, A*(5+C), H, W}; tx,ty logit-space, tw,th log-space
    Tensor obj_mask;  // {1, A, H, W}; 0 marks the ignore band
    Tensor box_mask;  // {1, A, H, W}; 1 at assigned anchor/cell pairs
    std::vector<std::pair<int, int>> assigned;  // (anchor, cell index) per annotation
};

DetectionTargets assign_targets(const std::vector<BoundingBox>& annotations,
                                const std::vector<Anchor>& anchors, int grid_h, int grid_w,
                                int grid_stride);

/// Encode a box for its anchor/cell; inverse of the decode formulas.
std::array<double, 4> encode_box(const BoundingBox& box, const Anchor& anchor, int cell_x,
                                 int cell_y, int grid_stride);

/// BCE on objectness (outside the ignore band) + MSE on offsets and BCE on
/// class score at assigned cells; mean over the batch axis.
Tensor detection_loss(Tensor raw_pred, const Tensor& target, const Tensor& obj_mask,
                      const Tensor& box_mask, int class_count, double w_obj = 1.0,
                      double w_box = 1.0, double w_cls = 1.0);

// ---------------------------------------------------------------------------
// training / inference

struct TrainingCurves {
    std::vector<double> loss, iou;                 // per iteration
    std::vector<int> eval_iterations;
    std::vector<double> map_values;                // per evaluation
};

struct DetectorTrainResult {
    Checkpoint best;
    TrainingCurves curves;
    double best_map = 0;
    int best_iteration = -1;
};

DetectorTrainResult train_detector(const Dataset& dataset, const DetectorTrainConfig& config);

/// Runs the detector on one image (any resolution); detections are returned
/// in the original image coordinate frame, post-NMS.
std::vector<Detection> detect(Network& net, const Image& frame, const std::vector<Anchor>& anchors,
                              double conf_threshold, double nms_threshold);

/// Validation-set mAP@50 plus matched-IoU summary.
struct DetectorEvaluation {
    std::optional<double> map50;
    IouSummary iou_summary;
};
DetectorEvaluation evaluate_detector(Network& net, const std::vector<const LabeledImage*>& images,
                                     const std::vector<Anchor>& anchors, double conf_threshold,
                                     double nms_threshold);

}  // namespace finnet

#endif
