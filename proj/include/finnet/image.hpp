#ifndef FINNET_IMAGE_HPP
#define FINNET_IMAGE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "finnet/tensor.hpp"

namespace finnet {

/// 8-bit RGB raster, row-major, interleaved channels.
struct Image {
    int height = 0, width = 0;
    std::vector<std::uint8_t> pixels;  // height*width*3

    static Image blank(int h, int w, std::uint8_t fill = 0);
    std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    std::uint8_t at(int y, int x, int c) const {
        return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
    bool operator==(const Image&) const = default;
};

Image read_image(const std::string& path);  // dispatches on extension (.ppm/.png)
void write_image(const Image& img, const std::string& path);

Image read_ppm(const std::string& path);
void write_ppm(const Image& img, const std::string& path);
Image read_png(const std::string& path);
void write_png(const Image& img, const std::string& path);

Image resize_bilinear(const Image& img, int out_h, int out_w);
/// Crop with clamping to image bounds; coordinates are half-open pixel indices.
Image crop(const Image& img, int x_min, int y_min, int x_max, int y_max);

/// {1,3,H,W} float tensor with values scaled to [0,1].
Tensor image_to_tensor(const Image& img);
/// Stacks images (all same size) into {N,3,H,W}.
Tensor images_to_batch(const std::vector<const Image*>& imgs);

}  // namespace finnet

#endif
