#include "finnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace finnet {

std::vector<const LabeledImage*> Dataset::subset(Provenance p) const {
    std::vector<const LabeledImage*> out;
    for (const auto& im : images)
        if (im.provenance == p) out.push_back(&im);
    return out;
}

std::vector<std::int64_t> Dataset::class_histogram(Provenance p) const {
    std::vector<std::int64_t> h(class_names.size(), 0);
    for (const auto& im : images)
        if (im.provenance == p && im.label >= 0 && im.label < static_cast<int>(h.size()))
            ++h[static_cast<size_t>(im.label)];
    return h;
}

static bool is_image_file(const fs::path& p) {
    auto e = p.extension().string();
    return e == ".png" || e == ".ppm";
}

Dataset load_classification_dataset(const std::string& root) {
    FN_CHECK(fs::is_directory(root), "dataset root is not a directory: " + root);
    Dataset ds;
    ds.kind = DatasetKind::Classification;
    std::vector<fs::path> class_dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) class_dirs.push_back(e.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    FN_CHECK(!class_dirs.empty(), "no class subdirectories under " + root);
    std::set<std::string> seen_ids;
    for (size_t c = 0; c < class_dirs.size(); ++c) {
        ds.class_names.push_back(class_dirs[c].filename().string());
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(class_dirs[c]))
            if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw Error("class directory is empty: " + class_dirs[c].string());
        for (const auto& f : files) {
            LabeledImage im;
            im.id = class_dirs[c].filename().string() + "/" + f.filename().string();
            if (!seen_ids.insert(im.id).second)
                throw Error("duplicate image id in dataset: " + im.id);
            try {
                im.pixels = read_image(f.string());
            } catch (const Error& err) {
                throw Error("unreadable image " + f.string() + ": " + err.what());
            }
            im.label = static_cast<int>(c);
            ds.images.push_back(std::move(im));
        }
    }
    return ds;
}

Dataset load_detection_dataset(const std::string& root) {
    fs::path images_dir = fs::path(root) / "images";
    fs::path labels_dir = fs::path(root) / "labels";
    FN_CHECK(fs::is_directory(images_dir), "missing images/ directory under " + root);
    FN_CHECK(fs::is_directory(labels_dir), "missing labels/ directory under " + root);
    Dataset ds;
    ds.kind = DatasetKind::Detection;
    ds.class_names = {"fish"};
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(images_dir))
        if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    FN_CHECK(!files.empty(), "no images under " + images_dir.string());
    for (const auto& f : files) {
        LabeledImage im;
        im.id = f.filename().string();
        im.pixels = read_image(f.string());
        fs::path lab = labels_dir / (f.stem().string() + ".txt");
        if (fs::exists(lab)) {
            std::ifstream is(lab);
            std::string line;
            while (std::getline(is, line)) {
                if (line.empty()) continue;
                std::istringstream ls(line);
                int cls;
                double cx, cy, w, h;
                if (!(ls >> cls >> cx >> cy >> w >> h))
                    throw Error("malformed annotation line in " + lab.string() + ": " + line);
                double W = im.pixels.width, H = im.pixels.height;
                BoundingBox b{(cx - w / 2) * W, (cy - h / 2) * H, (cx + w / 2) * W,
                              (cy + h / 2) * H};
                if (b.area() <= 0)
                    throw Error("degenerate zero-area annotation in " + lab.string());
                im.boxes.push_back(b);
                im.box_classes.push_back(cls);
            }
        }
        ds.images.push_back(std::move(im));
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& root) {
    if (ds.kind == DatasetKind::Classification) {
        for (const auto& im : ds.images) {
            fs::path dir = fs::path(root) / ds.class_names[static_cast<size_t>(im.label)];
            fs::create_directories(dir);
            std::string name = im.id;
            auto slash = name.find('/');
            if (slash != std::string::npos) name = name.substr(slash + 1);
            write_image(im.pixels, (dir / name).string());
        }
    } else {
        fs::create_directories(fs::path(root) / "images");
        fs::create_directories(fs::path(root) / "labels");
        for (const auto& im : ds.images) {
            write_image(im.pixels, (fs::path(root) / "images" / im.id).string());
            fs::path stem = fs::path(im.id).stem();
            std::ofstream os(fs::path(root) / "labels" / (stem.string() + ".txt"));
            double W = im.pixels.width, H = im.pixels.height;
            for (const auto& b : im.boxes) {
                os << 0 << ' ' << (b.x_min + b.x_max) / 2 / W << ' ' << (b.y_min + b.y_max) / 2 / H
                   << ' ' << b.width() / W << ' ' << b.height() / H << '\n';
            }
        }
    }
}

void split_dataset(Dataset& ds, double train_frac, double val_frac, double test_frac,
                   std::uint64_t seed, bool stratified) {
    FN_CHECK(std::abs(train_frac + val_frac + test_frac - 1.0) < 1e-9,
             "split fractions must sum to 1");
    int parts = 1 + (val_frac > 0 ? 1 : 0) + (test_frac > 0 ? 1 : 0);
    std::mt19937_64 rng(seed);
    auto assign_group = [&](std::vector<size_t> idx) {
        std::shuffle(idx.begin(), idx.end(), rng);
        size_t n = idx.size();
        if (n < static_cast<size_t>(parts)) {
            std::cerr << "warning: group of " << n << " samples is smaller than " << parts
                      << " split parts, assigning all to train\n";
            for (size_t i : idx) ds.images[i].provenance = Provenance::Train;
            return;
        }
        // floor the val/test counts; the remainder goes to train
        size_t n_val = static_cast<size_t>(std::floor(static_cast<double>(n) * val_frac));
        size_t n_test = static_cast<size_t>(std::floor(static_cast<double>(n) * test_frac));
        for (size_t k = 0; k < n; ++k) {
            Provenance p = Provenance::Train;
            if (k < n_val) p = Provenance::Val;
            else if (k < n_val + n_test) p = Provenance::Test;
            ds.images[idx[k]].provenance = p;
        }
    };
    if (stratified && ds.kind == DatasetKind::Classification) {
        int classes = static_cast<int>(ds.class_names.size());
        for (int c = 0; c < classes; ++c) {
            std::vector<size_t> idx;
            for (size_t i = 0; i < ds.images.size(); ++i)
                if (ds.images[i].label == c) idx.push_back(i);
            assign_group(std::move(idx));
        }
    } else {
        std::vector<size_t> idx(ds.images.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        assign_group(std::move(idx));
    }
}

// ---------------------------------------------------------------------------
// synthetic data

void style_color(int style, std::uint8_t rgb[3]) {
    // saturated hue wheel, golden-angle spacing so small style counts stay
    // far apart; backgrounds never exceed channel value 100
    double h = std::fmod(style * 137.508 + 7.0, 360.0) / 60.0;
    int i = static_cast<int>(h) % 6;
    double f = h - std::floor(h);
    double q = 1 - f;
    double r = 0, g = 0, b = 0;
    switch (i) {
        case 0: r = 1; g = f; break;
        case 1: r = q; g = 1; break;
        case 2: g = 1; b = f; break;
        case 3: g = q; b = 1; break;
        case 4: r = f; b = 1; break;
        default: r = 1; b = q; break;
    }
    rgb[0] = static_cast<std::uint8_t>(130 + 125 * r);
    rgb[1] = static_cast<std::uint8_t>(130 + 125 * g);
    rgb[2] = static_cast<std::uint8_t>(130 + 125 * b);
}

namespace {

void fill_clutter(Image& img, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> v(0, 90);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(v(rng));
}

/// Draws a rectangle or ellipse; returns the pixel-tight bounding box.
BoundingBox draw_shape(Image& img, int x0, int y0, int w, int h, int style, bool ellipse,
                       std::mt19937_64& rng) {
    std::uint8_t col[3];
    style_color(style, col);
    std::uniform_int_distribution<int> jitter(-12, 12);
    int min_x = img.width, min_y = img.height, max_x = -1, max_y = -1;
    double cx = x0 + w / 2.0, cy = y0 + h / 2.0;
    double a = w / 2.0, b = h / 2.0;
    for (int y = y0; y < y0 + h; ++y) {
        for (int x = x0; x < x0 + w; ++x) {
            if (ellipse) {
                double dx = (x + 0.5 - cx) / a, dy = (y + 0.5 - cy) / b;
                if (dx * dx + dy * dy > 1.0) continue;
            }
            for (int c = 0; c < 3; ++c) {
                int v = col[c] + jitter(rng);
                img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(v, 101, 255));
            }
            min_x = std::min(min_x, x);
            min_y = std::min(min_y, y);
            max_x = std::max(max_x, x);
            max_y = std::max(max_y, y);
        }
    }
    FN_CHECK(max_x >= 0, "shape rendered no pixels");
    return {static_cast<double>(min_x), static_cast<double>(min_y), static_cast<double>(max_x + 1),
            static_cast<double>(max_y + 1)};
}

bool too_close(const BoundingBox& a, const BoundingBox& b, double gap) {
    return !(a.x_max + gap <= b.x_min || b.x_max + gap <= a.x_min || a.y_max + gap <= b.y_min ||
             b.y_max + gap <= a.y_min);
}

}  // namespace

Dataset generate_synthetic_classification(int classes, int images_per_class, int image_size,
                                          std::uint64_t seed) {
    FN_CHECK(classes >= 2 && images_per_class >= 1 && image_size >= 16,
             "synthetic classification spec is out of range");
    Dataset ds;
    ds.kind = DatasetKind::Classification;
    for (int c = 0; c < classes; ++c) {
        char name[32];
        std::snprintf(name, sizeof(name), "species_%02d", c);
        ds.class_names.push_back(name);
    }
    for (int c = 0; c < classes; ++c) {
        for (int k = 0; k < images_per_class; ++k) {
            std::mt19937_64 rng(seed ^ (static_cast<std::uint64_t>(c) << 32) ^
                                static_cast<std::uint64_t>(k));
            LabeledImage im;
            char id[48];
            std::snprintf(id, sizeof(id), "species_%02d/img_%04d.png", c, k);
            im.id = id;
            im.label = c;
            im.pixels = Image::blank(image_size, image_size);
            fill_clutter(im.pixels, rng);
            std::uniform_int_distribution<int> extent(image_size / 3, image_size * 2 / 3);
            int w = extent(rng), h = extent(rng);
            std::uniform_int_distribution<int> px(1, image_size - w - 1), py(1, image_size - h - 1);
            draw_shape(im.pixels, px(rng), py(rng), w, h, c, c % 2 == 1, rng);
            ds.images.push_back(std::move(im));
        }
    }
    return ds;
}

Dataset generate_synthetic_detection(int images, int image_size, int styles, std::uint64_t seed,
                                     int min_fish, int max_fish) {
    FN_CHECK(images >= 1 && image_size >= 32 && styles >= 1 && min_fish >= 1 &&
                 max_fish >= min_fish,
             "synthetic detection spec is out of range");
    Dataset ds;
    ds.kind = DatasetKind::Detection;
    ds.class_names = {"fish"};
    for (int k = 0; k < images; ++k) {
        std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(k));
        LabeledImage im;
        char id[32];
        std::snprintf(id, sizeof(id), "frame_%05d.png", k);
        im.id = id;
        im.pixels = Image::blank(image_size, image_size);
        fill_clutter(im.pixels, rng);
        std::uniform_int_distribution<int> count(min_fish, max_fish);
        std::uniform_int_distribution<int> style(0, styles - 1);
        std::uniform_int_distribution<int> extent(image_size / 5, image_size / 3);
        int want = count(rng);
        for (int f = 0; f < want; ++f) {
            for (int attempt = 0; attempt < 50; ++attempt) {
                int w = extent(rng), h = extent(rng);
                std::uniform_int_distribution<int> px(1, image_size - w - 1);
                std::uniform_int_distribution<int> py(1, image_size - h - 1);
                BoundingBox cand{0, 0, 0, 0};
                int x0 = px(rng), y0 = py(rng);
                cand = {static_cast<double>(x0), static_cast<double>(y0),
                        static_cast<double>(x0 + w), static_cast<double>(y0 + h)};
                bool ok = true;
                for (const auto& other : im.boxes)
                    if (too_close(cand, other, 3.0)) { ok = false; break; }
                if (!ok) continue;
                int s = style(rng);
                BoundingBox tight =
                    draw_shape(im.pixels, x0, y0, w, h, s, (s + f) % 2 == 1, rng);
                im.boxes.push_back(tight);
                im.box_classes.push_back(s);
                break;
            }
        }
        ds.images.push_back(std::move(im));
    }
    return ds;
}

}  // namespace finnet
