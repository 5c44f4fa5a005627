#ifndef FINNET_DATASET_HPP
#define FINNET_DATASET_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "finnet/boxes.hpp"
#include "finnet/image.hpp"

namespace finnet {

enum class Provenance { Unsplit, Train, Val, Test };
enum class DatasetKind { Classification, Detection };

struct LabeledImage {
    std::string id;
    Image pixels;
    int label = -1;                  // classification class index
    std::vector<BoundingBox> boxes;  // detection annotations, pixel coordinates
    std::vector<int> box_classes;    // per-box species style (synthetic ground truth)
    Provenance provenance = Provenance::Unsplit;
};

struct Dataset {
    DatasetKind kind = DatasetKind::Classification;
    std::vector<std::string> class_names;
    std::vector<LabeledImage> images;

    std::vector<const LabeledImage*> subset(Provenance p) const;
    std::vector<std::int64_t> class_histogram(Provenance p) const;
};

/// Directory-per-class layout: root/<class_name>/<image files>.
Dataset load_classification_dataset(const std::string& root);

/// Detection layout: root/images/*.png|ppm plus root/labels/<stem>.txt with
/// lines `class_id cx cy w h` normalized to [0,1].
Dataset load_detection_dataset(const std::string& root);

void save_dataset(const Dataset& ds, const std::string& root);

/// Deterministic split; stratified per class for classification datasets.
/// Fractions must sum to 1. A class smaller than the number of split parts
/// falls back to all-train (with a warning on stderr).
void split_dataset(Dataset& ds, double train_frac, double val_frac, double test_frac,
                   std::uint64_t seed, bool stratified = true);

// ---------------------------------------------------------------------------
// synthetic desk-scale datasets

/// Class-dependent colored/oriented patterns over background clutter.
Dataset generate_synthetic_classification(int classes, int images_per_class, int image_size,
                                          std::uint64_t seed);

/// Frames with 1..max_fish disjoint ellipse-or-rectangle "fish" drawn in one
/// of `styles` species styles; annotations are exact pixel-tight boxes.
Dataset generate_synthetic_detection(int images, int image_size, int styles, std::uint64_t seed,
                                     int min_fish = 1, int max_fish = 4);

/// The saturated fill color of a species style; backgrounds stay below
/// channel value 100 so styled pixels are separable by thresholding.
void style_color(int style, std::uint8_t rgb[3]);

}  // namespace finnet

#endif
