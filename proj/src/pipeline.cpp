#include "finnet/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace finnet {

std::vector<Anchor> anchors_from_metadata(const std::map<std::string, std::string>& metadata) {
    auto it = metadata.find("anchors");
    FN_CHECK(it != metadata.end(), "detector checkpoint carries no anchor metadata");
    std::vector<Anchor> anchors;
    std::istringstream is(it->second);
    std::string pair;
    while (std::getline(is, pair, ';')) {
        if (pair.empty()) continue;
        auto comma = pair.find(',');
        FN_CHECK(comma != std::string::npos, "malformed anchor metadata: " + it->second);
        anchors.push_back({std::stod(pair.substr(0, comma)), std::stod(pair.substr(comma + 1))});
    }
    FN_CHECK(!anchors.empty(), "detector checkpoint anchor list is empty");
    return anchors;
}

Pipeline Pipeline::load(const std::string& detector_ckpt, const std::string& classifier_ckpt,
                        PipelineConfig cfg) {
    Pipeline p;
    p.cfg_ = cfg;
    Checkpoint det = load_checkpoint(detector_ckpt);
    Checkpoint cls = load_checkpoint(classifier_ckpt);
    p.detector_ = network_from_checkpoint(det);
    p.classifier_ = network_from_checkpoint(cls);
    p.anchors_ = anchors_from_metadata(det.metadata);
    auto names_it = cls.metadata.find("class_names");
    if (names_it != cls.metadata.end()) {
        std::istringstream is(names_it->second);
        std::string name;
        while (std::getline(is, name, ',')) p.class_names_.push_back(name);
    } else {
        for (int c = 0; c < p.classifier_->spec().class_count; ++c)
            p.class_names_.push_back("class_" + std::to_string(c));
    }
    if (static_cast<int>(p.class_names_.size()) != p.classifier_->spec().class_count)
        throw Error("classifier checkpoint lists " + std::to_string(p.class_names_.size()) +
                    " class names but the network head has " +
                    std::to_string(p.classifier_->spec().class_count) + " outputs");
    return p;
}

FrameResult Pipeline::process(const std::string& frame_id, const Image& frame) {
    FrameResult res;
    res.frame_id = frame_id;
    res.detections =
        detect(*detector_, frame, anchors_, cfg_.conf_threshold, cfg_.nms_threshold);
    for (const auto& det : res.detections) {
        double mx = det.box.width() * cfg_.crop_margin, my = det.box.height() * cfg_.crop_margin;
        // crops come from the original-resolution frame, not the detector input
        Image patch = crop(frame, static_cast<int>(std::floor(det.box.x_min - mx)),
                           static_cast<int>(std::floor(det.box.y_min - my)),
                           static_cast<int>(std::ceil(det.box.x_max + mx)),
                           static_cast<int>(std::ceil(det.box.y_max + my)));
        auto [arg, probs] = classify(*classifier_, patch);
        res.species_counts[class_names_[static_cast<size_t>(arg)]]++;
        res.classifications.emplace_back(arg, std::move(probs));
    }
    return res;
}

void write_frame_results(const std::vector<FrameResult>& results,
                         const std::vector<std::string>& class_names,
                         const std::string& summary_path, const std::string& detail_path) {
    std::ofstream summary(summary_path);
    if (!summary) throw Error("cannot open output file: " + summary_path);
    summary << "frame_id,n_detections";
    for (const auto& n : class_names) summary << ',' << n;
    summary << '\n';
    for (const auto& r : results) {
        summary << r.frame_id << ',' << r.detections.size();
        for (const auto& n : class_names) {
            auto it = r.species_counts.find(n);
            summary << ',' << (it == r.species_counts.end() ? 0 : it->second);
        }
        summary << '\n';
    }
    std::ofstream detail(detail_path);
    if (!detail) throw Error("cannot open output file: " + detail_path);
    detail << "frame_id,x_min,y_min,x_max,y_max,objectness,predicted_class,class_probability\n";
    for (const auto& r : results) {
        for (size_t i = 0; i < r.detections.size(); ++i) {
            const auto& d = r.detections[i];
            int arg = r.classifications[i].first;
            detail << r.frame_id << ',' << d.box.x_min << ',' << d.box.y_min << ',' << d.box.x_max
                   << ',' << d.box.y_max << ',' << d.objectness << ','
                   << class_names[static_cast<size_t>(arg)] << ','
                   << r.classifications[i].second[static_cast<size_t>(arg)] << '\n';
        }
    }
}

}  // namespace finnet
