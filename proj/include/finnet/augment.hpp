#ifndef FINNET_AUGMENT_HPP
#define FINNET_AUGMENT_HPP

#include <random>

#include "finnet/dataset.hpp"
#include "finnet/image.hpp"

namespace finnet {

struct AugmentConfig {
    double rotation_range_degrees = 20.0;  // uniform in +/- range
    double shift_fraction = 0.1;           // of image extent, each axis
    double scale_min = 0.9, scale_max = 1.1;
    double shear_degrees = 10.0;
    double flip_probability = 0.5;
    int expansion_factor = 1;

    void validate() const;
};

/// One concrete transform draw; all-defaults is the exact identity.
struct AffineParams {
    double rotation_deg = 0, shift_x = 0, shift_y = 0, scale = 1, shear_deg = 0;
    bool flip = false;
};

AffineParams sample_affine(const AugmentConfig& config, int width, int height,
                           std::mt19937_64& rng);

/// Rotation/shift/scale/shear composed about the image center with bilinear
/// sampling and edge-replicate fill, then an optional horizontal flip.
/// Output dimensions equal input dimensions.
Image apply_affine(const Image& img, const AffineParams& params);

Image augment_image(const Image& img, const AugmentConfig& config, std::mt19937_64& rng);

/// Grows the training split to expansion_factor times its base size
/// (originals retained); validation and test splits are untouched.
Dataset expand_dataset(const Dataset& base, const AugmentConfig& config, std::uint64_t seed);

}  // namespace finnet

#endif
