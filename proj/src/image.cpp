#include "finnet/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace finnet {

Image Image::blank(int h, int w, std::uint8_t fill) {
    Image img;
    FN_CHECK(h > 0 && w > 0, "image extents must be positive");
    img.height = h;
    img.width = w;
    img.pixels.assign(static_cast<size_t>(h) * w * 3, fill);
    return img;
}

static bool ends_with(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

Image read_image(const std::string& path) {
    if (ends_with(path, ".ppm")) return read_ppm(path);
    if (ends_with(path, ".png")) return read_png(path);
    throw Error("unsupported image format (expected .ppm or .png): " + path);
}

void write_image(const Image& img, const std::string& path) {
    if (ends_with(path, ".ppm")) return write_ppm(img, path);
    if (ends_with(path, ".png")) return write_png(img, path);
    throw Error("unsupported image format (expected .ppm or .png): " + path);
}

// ---------------------------------------------------------------------------
// PPM (binary P6)

Image read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open image: " + path);
    std::string magic;
    is >> magic;
    if (magic != "P6") throw Error("unsupported PPM variant '" + magic + "' in " + path);
    auto next_token = [&]() -> long {
        // skips whitespace and '#' comments
        while (is) {
            int c = is.peek();
            if (c == '#') {
                std::string junk;
                std::getline(is, junk);
            } else if (std::isspace(c)) {
                is.get();
            } else {
                break;
            }
        }
        long v = -1;
        is >> v;
        return v;
    };
    long w = next_token(), h = next_token(), maxval = next_token();
    if (!is || w <= 0 || h <= 0 || maxval != 255)
        throw Error("malformed PPM header in " + path);
    is.get();  // single whitespace before raster
    Image img = Image::blank(static_cast<int>(h), static_cast<int>(w));
    is.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (static_cast<size_t>(is.gcount()) != img.pixels.size())
        throw Error("PPM raster truncated in " + path);
    return img;
}

void write_ppm(const Image& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open image for writing: " + path);
    os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()),
             static_cast<std::streamsize>(img.pixels.size()));
    if (!os) throw Error("failed writing image: " + path);
}

// ---------------------------------------------------------------------------
// PNG via libpng

Image read_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw Error("cannot open image: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw Error("libpng initialization failed");
    }
    Image img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw Error("failed decoding PNG: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_uint_32 w = png_get_image_width(png, info), h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info), depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    img = Image::blank(static_cast<int>(h), static_cast<int>(w));
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = img.pixels.data() + static_cast<size_t>(y) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

void write_png(const Image& img, const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw Error("cannot open image for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw Error("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw Error("failed encoding PNG: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
                 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<size_t>(img.height));
    for (int y = 0; y < img.height; ++y)
        rows[static_cast<size_t>(y)] =
            const_cast<png_bytep>(img.pixels.data() + static_cast<size_t>(y) * img.width * 3);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

// ---------------------------------------------------------------------------
// geometry

Image resize_bilinear(const Image& img, int out_h, int out_w) {
    FN_CHECK(out_h > 0 && out_w > 0, "resize target must be positive");
    if (out_h == img.height && out_w == img.width) return img;
    Image out = Image::blank(out_h, out_w);
    double sy = static_cast<double>(img.height) / out_h;
    double sx = static_cast<double>(img.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int ya = std::clamp(y0, 0, img.height - 1), yb = std::clamp(y0 + 1, 0, img.height - 1);
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int xa = std::clamp(x0, 0, img.width - 1), xb = std::clamp(x0 + 1, 0, img.width - 1);
            for (int c = 0; c < 3; ++c) {
                double v = (1 - wy) * ((1 - wx) * img.at(ya, xa, c) + wx * img.at(ya, xb, c)) +
                           wy * ((1 - wx) * img.at(yb, xa, c) + wx * img.at(yb, xb, c));
                out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
            }
        }
    }
    return out;
}

Image crop(const Image& img, int x_min, int y_min, int x_max, int y_max) {
    x_min = std::clamp(x_min, 0, img.width - 1);
    y_min = std::clamp(y_min, 0, img.height - 1);
    x_max = std::clamp(x_max, x_min + 1, img.width);
    y_max = std::clamp(y_max, y_min + 1, img.height);
    Image out = Image::blank(y_max - y_min, x_max - x_min);
    for (int y = y_min; y < y_max; ++y)
        for (int x = x_min; x < x_max; ++x)
            for (int c = 0; c < 3; ++c) out.at(y - y_min, x - x_min, c) = img.at(y, x, c);
    return out;
}

Tensor image_to_tensor(const Image& img) {
    return images_to_batch({&img});
}

Tensor images_to_batch(const std::vector<const Image*>& imgs) {
    FN_CHECK(!imgs.empty(), "cannot batch zero images");
    int h = imgs[0]->height, w = imgs[0]->width;
    int n = static_cast<int>(imgs.size());
    std::vector<float> v(static_cast<size_t>(n) * 3 * h * w);
    for (int i = 0; i < n; ++i) {
        const Image& im = *imgs[static_cast<size_t>(i)];
        FN_CHECK(im.height == h && im.width == w, "batched images must share dimensions");
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    v[((static_cast<size_t>(i) * 3 + c) * h + y) * w + x] =
                        static_cast<float>(im.at(y, x, c)) / 255.0f;
    }
    return Tensor::from({n, 3, h, w}, std::move(v));
}

}  // namespace finnet
