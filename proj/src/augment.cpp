#include "finnet/augment.hpp"

#include <cmath>

namespace finnet {

void AugmentConfig::validate() const {
    FN_CHECK(shift_fraction >= 0 && shift_fraction < 1, "shift fraction must lie in [0,1)");
    FN_CHECK(rotation_range_degrees >= 0 && shear_degrees >= 0,
             "rotation/shear ranges must be non-negative");
    FN_CHECK(scale_min > 0 && scale_max >= scale_min, "scale bounds must be positive and ordered");
    FN_CHECK(flip_probability >= 0 && flip_probability <= 1, "flip probability must lie in [0,1]");
    FN_CHECK(expansion_factor >= 1, "expansion factor must be at least 1");
}

AffineParams sample_affine(const AugmentConfig& config, int width, int height,
                           std::mt19937_64& rng) {
    auto uni = [&](double lo, double hi) {
        if (lo == hi) return lo;
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    AffineParams p;
    p.rotation_deg = uni(-config.rotation_range_degrees, config.rotation_range_degrees);
    p.shift_x = uni(-config.shift_fraction, config.shift_fraction) * width;
    p.shift_y = uni(-config.shift_fraction, config.shift_fraction) * height;
    p.scale = uni(config.scale_min, config.scale_max);
    p.shear_deg = uni(-config.shear_degrees, config.shear_degrees);
    p.flip = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < config.flip_probability;
    return p;
}

Image apply_affine(const Image& img, const AffineParams& params) {
    const double rad = params.rotation_deg * M_PI / 180.0;
    const double sh = std::tan(params.shear_deg * M_PI / 180.0);
    // forward map: p' = R * Sh * S * (p - c) + c + shift; sample via inverse
    const double a00 = std::cos(rad) * params.scale + (-std::sin(rad)) * 0.0;
    const double a01 = std::cos(rad) * (sh * params.scale) + (-std::sin(rad)) * params.scale;
    const double a10 = std::sin(rad) * params.scale;
    const double a11 = std::sin(rad) * (sh * params.scale) + std::cos(rad) * params.scale;
    const double det = a00 * a11 - a01 * a10;
    FN_CHECK(std::abs(det) > 1e-12, "degenerate affine transform");
    const double i00 = a11 / det, i01 = -a01 / det, i10 = -a10 / det, i11 = a00 / det;
    const double cx = (img.width - 1) / 2.0, cy = (img.height - 1) / 2.0;

    Image out = Image::blank(img.height, img.width);
    const bool pure_identity = params.rotation_deg == 0 && params.shear_deg == 0 &&
                               params.scale == 1 && params.shift_x == 0 && params.shift_y == 0;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            if (pure_identity) {
                for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, x, c);
                continue;
            }
            double dx = x - cx - params.shift_x, dy = y - cy - params.shift_y;
            double sx = i00 * dx + i01 * dy + cx;
            double sy = i10 * dx + i11 * dy + cy;
            // edge replicate
            sx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
            sy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
            int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
            double fx = sx - x0, fy = sy - y0;
            if (fx == 0 && fy == 0) {
                for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y0, x0, c);
                continue;
            }
            int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
            for (int c = 0; c < 3; ++c) {
                double v = (1 - fy) * ((1 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c)) +
                           fy * ((1 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c));
                out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
            }
        }
    }
    if (params.flip) {
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width / 2; ++x) {
                int mx = out.width - 1 - x;
                for (int c = 0; c < 3; ++c) std::swap(out.at(y, x, c), out.at(y, mx, c));
            }
    }
    return out;
}

Image augment_image(const Image& img, const AugmentConfig& config, std::mt19937_64& rng) {
    config.validate();
    return apply_affine(img, sample_affine(config, img.width, img.height, rng));
}

Dataset expand_dataset(const Dataset& base, const AugmentConfig& config, std::uint64_t seed) {
    config.validate();
    Dataset out = base;
    if (config.expansion_factor == 1) return out;
    size_t n_train = 0;
    for (size_t i = 0; i < base.images.size(); ++i) {
        const auto& im = base.images[i];
        if (im.provenance != Provenance::Train) continue;
        ++n_train;
        for (int k = 1; k < config.expansion_factor; ++k) {
            // per-image derived seed keeps expansion order-independent
            std::mt19937_64 rng(seed ^ (static_cast<std::uint64_t>(i) * 0x9e3779b97f4a7c15ull) ^
                                static_cast<std::uint64_t>(k));
            LabeledImage copy;
            copy.id = im.id + "#aug" + std::to_string(k);
            copy.pixels = augment_image(im.pixels, config, rng);
            copy.label = im.label;
            copy.provenance = Provenance::Train;
            out.images.push_back(std::move(copy));
        }
    }
    (void)n_train;
    return out;
}

}  // namespace finnet
