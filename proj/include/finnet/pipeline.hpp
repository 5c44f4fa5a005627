#ifndef FINNET_PIPELINE_HPP
#define FINNET_PIPELINE_HPP

#include <map>
#include <memory>

#include "finnet/classifier.hpp"
#include "finnet/detector.hpp"

namespace finnet {

struct FrameResult {
    std::string frame_id;
    std::vector<Detection> detections;
    std::vector<std::pair<int, std::vector<float>>> classifications;  // argmax + probability row
    std::map<std::string, int> species_counts;
};

struct PipelineConfig {
    double conf_threshold = 0.25;
    double nms_threshold = 0.45;
    double crop_margin = 0.0;  // fraction of box extent added on each side
};

/// Two-stage detect-then-classify runtime over an ordered frame sequence.
class Pipeline {
  public:
    static Pipeline load(const std::string& detector_ckpt, const std::string& classifier_ckpt,
                         PipelineConfig cfg);

    /// Detect, crop from the original-resolution frame, classify, count.
    FrameResult process(const std::string& frame_id, const Image& frame);

    const std::vector<std::string>& class_names() const { return class_names_; }

  private:
    std::unique_ptr<Network> detector_, classifier_;
    std::vector<Anchor> anchors_;
    std::vector<std::string> class_names_;
    PipelineConfig cfg_;
};

std::vector<Anchor> anchors_from_metadata(const std::map<std::string, std::string>& metadata);

/// Summary rows `frame_id,n_detections,<count per class>` and per-detection
/// detail rows.
void write_frame_results(const std::vector<FrameResult>& results,
                         const std::vector<std::string>& class_names,
                         const std::string& summary_path, const std::string& detail_path);

}  // namespace finnet

#endif
