#ifndef FINNET_BOXES_HPP
#define FINNET_BOXES_HPP

#include <algorithm>

namespace finnet {

/// Axis-aligned box in image pixel coordinates, corners inclusive-exclusive
/// by area convention (x_max - x_min) * (y_max - y_min).
struct BoundingBox {
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }

    BoundingBox clamped(double w, double h) const {
        return {std::clamp(x_min, 0.0, w), std::clamp(y_min, 0.0, h), std::clamp(x_max, 0.0, w),
                std::clamp(y_max, 0.0, h)};
    }
};

struct Detection {
    BoundingBox box;
    double objectness = 0;
    double class_score = 1;  // single fish class

    double score() const { return objectness * class_score; }
};

/// Jaccard index; 0 for disjoint boxes and for two degenerate boxes.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
    double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
    double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
    double inter = ix * iy;
    double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

}  // namespace finnet

#endif
