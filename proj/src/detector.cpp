#include "finnet/detector.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>

#include "finnet/detector_loss.hpp"

namespace finnet {

std::vector<Anchor> default_anchors() {
    return {{10, 13},  {16, 30},  {33, 23},  {30, 61},   {62, 45},
            {59, 119}, {116, 90}, {156, 198}, {373, 326}};
}

void DetectorTrainConfig::validate() const {
    FN_CHECK(batch_size > 0 && subdivisions > 0 && batch_size % subdivisions == 0,
             "detector batch size must be positive and divisible by subdivisions");
    FN_CHECK(total_iterations > 0 && input_size > 0 && eval_interval > 0,
             "detector training config values must be positive");
    FN_CHECK(!anchors.empty(), "detector training needs at least one anchor prior");
    FN_CHECK(burn_in_lr > 0 && base_lr > 0, "learning rates must be positive");
}

// ---------------------------------------------------------------------------
// decode / NMS

static double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<Detection> decode_predictions(const Tensor& raw_grid, const std::vector<Anchor>& anchors,
                                          int grid_stride, double conf_threshold) {
    const Tensor* g = &raw_grid;
    Shape s = g->shape();
    if (s.size() == 4) {
        FN_CHECK(s[0] == 1, "decode_predictions expects a single grid, got batch " + shape_str(s));
        s.erase(s.begin());
    }
    FN_CHECK(s.size() == 3, "decode_predictions expects {A*(5+C),H,W}");
    int a = static_cast<int>(anchors.size());
    const int fields = 6;  // 5 + single fish class
    FN_CHECK(s[0] == a * fields, "grid channel extent " + std::to_string(s[0]) +
                                     " does not match anchors*(5+C)=" + std::to_string(a * fields));
    int gh = s[1], gw = s[2];
    double img_w = static_cast<double>(gw) * grid_stride;
    double img_h = static_cast<double>(gh) * grid_stride;
    const float* d = raw_grid.data();
    auto at = [&](int ai, int f, int cy, int cx) {
        return static_cast<double>(d[((static_cast<size_t>(ai) * fields + f) * gh + cy) * gw + cx]);
    };
    std::vector<Detection> out;
    for (int ai = 0; ai < a; ++ai)
        for (int cy = 0; cy < gh; ++cy)
            for (int cx = 0; cx < gw; ++cx) {
                double obj = sig(at(ai, 4, cy, cx));
                double cls = sig(at(ai, 5, cy, cx));
                if (obj * cls < conf_threshold) continue;
                double bx = (sig(at(ai, 0, cy, cx)) + cx) * grid_stride;
                double by = (sig(at(ai, 1, cy, cx)) + cy) * grid_stride;
                double bw = anchors[static_cast<size_t>(ai)].width * std::exp(at(ai, 2, cy, cx));
                double bh = anchors[static_cast<size_t>(ai)].height * std::exp(at(ai, 3, cy, cx));
                Detection det;
                det.box = BoundingBox{bx - bw / 2, by - bh / 2, bx + bw / 2, by + bh / 2}.clamped(
                    img_w, img_h);
                det.objectness = obj;
                det.class_score = cls;
                out.push_back(det);
            }
    return out;
}

std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold) {
    FN_CHECK(iou_threshold >= 0 && iou_threshold <= 1, "NMS threshold must lie in [0,1]");
    std::stable_sort(detections.begin(), detections.end(),
                     [](const Detection& a, const Detection& b) { return a.score() > b.score(); });
    std::vector<Detection> kept;
    for (const auto& d : detections) {
        bool suppressed = false;
        for (const auto& k : kept)
            if (iou(d.box, k.box) >= iou_threshold) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

// ---------------------------------------------------------------------------
// assignment / encode

static double shape_iou(double w1, double h1, double w2, double h2) {
    double inter = std::min(w1, w2) * std::min(h1, h2);
    return inter / (w1 * h1 + w2 * h2 - inter);
}

std::array<double, 4> encode_box(const BoundingBox& box, const Anchor& anchor, int cell_x,
                                 int cell_y, int grid_stride) {
    double cx = (box.x_min + box.x_max) / 2 / grid_stride - cell_x;
    double cy = (box.y_min + box.y_max) / 2 / grid_stride - cell_y;
    cx = std::clamp(cx, 1e-6, 1.0 - 1e-6);
    cy = std::clamp(cy, 1e-6, 1.0 - 1e-6);
    return {std::log(cx / (1 - cx)), std::log(cy / (1 - cy)), std::log(box.width() / anchor.width),
            std::log(box.height() / anchor.height)};
}

DetectionTargets assign_targets(const std::vector<BoundingBox>& annotations,
                                const std::vector<Anchor>& anchors, int grid_h, int grid_w,
                                int grid_stride) {
    int a = static_cast<int>(anchors.size());
    const int fields = 6;
    DetectionTargets t;
    t.target = Tensor::zeros({1, a * fields, grid_h, grid_w});
    t.obj_mask = Tensor::filled({1, a, grid_h, grid_w}, 1.0f);
    t.box_mask = Tensor::zeros({1, a, grid_h, grid_w});
    double img_w = static_cast<double>(grid_w) * grid_stride;
    double img_h = static_cast<double>(grid_h) * grid_stride;
    auto tslot = [&](int ai, int f, int cell) -> float& {
        return t.target.data()[(static_cast<size_t>(ai) * fields + f) * grid_h * grid_w + cell];
    };
    for (const auto& raw_box : annotations) {
        if (raw_box.area() <= 0) throw Error("degenerate zero-area annotation rejected");
        FN_CHECK(raw_box.x_min >= -1 && raw_box.y_min >= -1 && raw_box.x_max <= img_w + 1 &&
                     raw_box.y_max <= img_h + 1,
                 "annotation outside image bounds");
        BoundingBox box = raw_box.clamped(img_w, img_h);
        double cx = (box.x_min + box.x_max) / 2, cy = (box.y_min + box.y_max) / 2;
        int cell_x = std::clamp(static_cast<int>(cx / grid_stride), 0, grid_w - 1);
        int cell_y = std::clamp(static_cast<int>(cy / grid_stride), 0, grid_h - 1);
        int cell = cell_y * grid_w + cell_x;
        int best = 0;
        double best_iou = -1;
        for (int ai = 0; ai < a; ++ai) {
            double v = shape_iou(box.width(), box.height(), anchors[static_cast<size_t>(ai)].width,
                                 anchors[static_cast<size_t>(ai)].height);
            if (v > best_iou) {
                best_iou = v;
                best = ai;
            }
        }
        auto enc = encode_box(box, anchors[static_cast<size_t>(best)], cell_x, cell_y, grid_stride);
        for (int f = 0; f < 4; ++f) tslot(best, f, cell) = static_cast<float>(enc[static_cast<size_t>(f)]);
        tslot(best, 4, cell) = 1.0f;
        tslot(best, 5, cell) = 1.0f;
        size_t mi = static_cast<size_t>(best) * grid_h * grid_w + static_cast<size_t>(cell);
        t.obj_mask.data()[mi] = 1.0f;
        t.box_mask.data()[mi] = 1.0f;
        t.assigned.emplace_back(best, cell);
        // ignore band: non-best anchors that still overlap this box well
        for (int ai = 0; ai < a; ++ai) {
            if (ai == best) continue;
            size_t oi = static_cast<size_t>(ai) * grid_h * grid_w + static_cast<size_t>(cell);
            if (t.box_mask.data()[oi] != 0.0f) continue;
            double v = shape_iou(box.width(), box.height(), anchors[static_cast<size_t>(ai)].width,
                                 anchors[static_cast<size_t>(ai)].height);
            if (v > 0.5) t.obj_mask.data()[oi] = 0.0f;
        }
    }
    return t;
}

Tensor detection_loss(Tensor raw_pred, const Tensor& target, const Tensor& obj_mask,
                      const Tensor& box_mask, int class_count, double w_obj, double w_box,
                      double w_cls) {
    return detection_loss_t<float>(std::move(raw_pred), target, obj_mask, box_mask, class_count,
                                   static_cast<float>(w_obj), static_cast<float>(w_box),
                                   static_cast<float>(w_cls));
}

// ---------------------------------------------------------------------------
// training

namespace {

struct PreparedSample {
    Tensor input;  // {1,3,S,S}
    DetectionTargets targets;
    std::vector<BoundingBox> boxes_input_scale;
};

Tensor stack_batch(const std::vector<const Tensor*>& ts) {
    Shape s = ts[0]->shape();
    s[0] = static_cast<int>(ts.size());
    std::vector<float> v;
    v.reserve(static_cast<size_t>(numel(s)));
    for (const auto* t : ts) v.insert(v.end(), t->values().begin(), t->values().end());
    return Tensor::from(s, std::move(v));
}

}  // namespace

DetectorTrainResult train_detector(const Dataset& dataset, const DetectorTrainConfig& config) {
    config.validate();
    FN_CHECK(dataset.kind == DatasetKind::Detection, "detector training needs a detection dataset");
    FN_CHECK(!dataset.images.empty(), "detector training dataset is empty");

    std::vector<const LabeledImage*> train = dataset.subset(Provenance::Train);
    std::vector<const LabeledImage*> val = dataset.subset(Provenance::Val);
    if (train.empty()) {
        for (const auto& im : dataset.images) train.push_back(&im);
    }
    if (val.empty()) {
        std::cerr << "warning: no validation split; evaluating mAP on the training set\n";
        val = train;
    }

    int a = static_cast<int>(config.anchors.size());
    NetworkSpec spec = build_detector_backbone(config.preset, config.input_size, a);
    Network net(spec, config.seed);
    auto shapes = spec.validate();
    // locate the (single, at desk scale) detection grid
    int grid_h = 0, grid_w = 0;
    for (size_t i = 0; i < spec.layers.size(); ++i)
        if (spec.layers[i].kind == LayerKind::GridOutput) {
            grid_h = shapes[i][2];
            grid_w = shapes[i][3];
        }
    FN_CHECK(grid_h > 0, "backbone has no grid output");
    int stride = config.input_size / grid_w;

    // resize frames and annotations to the network input scale once
    std::vector<PreparedSample> prepared;
    prepared.reserve(train.size());
    for (const auto* im : train) {
        PreparedSample ps;
        Image resized = resize_bilinear(im->pixels, config.input_size, config.input_size);
        ps.input = image_to_tensor(resized);
        double sx = static_cast<double>(config.input_size) / im->pixels.width;
        double sy = static_cast<double>(config.input_size) / im->pixels.height;
        for (const auto& b : im->boxes)
            ps.boxes_input_scale.push_back({b.x_min * sx, b.y_min * sy, b.x_max * sx, b.y_max * sy});
        ps.targets = assign_targets(ps.boxes_input_scale, config.anchors, grid_h, grid_w, stride);
        prepared.push_back(std::move(ps));
    }

    auto params = net.trainable_params();
    Adam<float> adam(params, {.learning_rate = static_cast<float>(config.burn_in_lr)});

    std::mt19937_64 rng(config.seed + 1);
    std::vector<size_t> order(prepared.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    size_t cursor = 0;
    auto next_index = [&]() {
        if (cursor >= order.size()) {
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        return order[cursor++];
    };

    DetectorTrainResult result;
    std::vector<std::vector<float>> best_snapshot;
    int sub_size = config.batch_size / config.subdivisions;
    const int fields = 6;

    for (int iter = 1; iter <= config.total_iterations; ++iter) {
        adam.set_learning_rate(static_cast<float>(iter <= config.burn_in_iterations
                                                      ? config.burn_in_lr
                                                      : config.base_lr));
        adam.zero_grad();
        double iter_loss = 0;
        double iou_acc = 0;
        int iou_n = 0;
        for (int sub = 0; sub < config.subdivisions; ++sub) {
            std::vector<size_t> batch_idx;
            std::vector<const Tensor*> xs, tg, om, bm;
            for (int k = 0; k < sub_size; ++k) {
                size_t idx = next_index();
                batch_idx.push_back(idx);
                xs.push_back(&prepared[idx].input);
                tg.push_back(&prepared[idx].targets.target);
                om.push_back(&prepared[idx].targets.obj_mask);
                bm.push_back(&prepared[idx].targets.box_mask);
            }
            Tensor x = stack_batch(xs);
            Tensor pred = net.forward_grids(x, true)[0];
            Tensor loss = detection_loss(pred, stack_batch(tg), stack_batch(om), stack_batch(bm), 1,
                                         config.obj_weight, config.box_weight, config.cls_weight);
            // per-subdivision losses already average over sub_size; rescale so
            // the accumulated gradient equals one monolithic effective batch
            Tensor scaled = smul(loss, static_cast<float>(sub_size) /
                                           static_cast<float>(config.batch_size));
            backward(scaled);
            iter_loss += static_cast<double>(scaled.item());

            // training IoU: decode the assigned slot for each annotation
            for (size_t bi = 0; bi < batch_idx.size(); ++bi) {
                const auto& ps = prepared[batch_idx[bi]];
                const float* d = pred.data() + static_cast<size_t>(bi) * a * fields * grid_h * grid_w;
                for (size_t gi = 0; gi < ps.targets.assigned.size(); ++gi) {
                    auto [ai, cell] = ps.targets.assigned[gi];
                    int cy = cell / grid_w, cx = cell % grid_w;
                    auto at = [&](int f) {
                        return static_cast<double>(
                            d[(static_cast<size_t>(ai) * fields + f) * grid_h * grid_w + cell]);
                    };
                    double bx = (sig(at(0)) + cx) * stride, by = (sig(at(1)) + cy) * stride;
                    double bw = config.anchors[static_cast<size_t>(ai)].width * std::exp(at(2));
                    double bh = config.anchors[static_cast<size_t>(ai)].height * std::exp(at(3));
                    BoundingBox pb{bx - bw / 2, by - bh / 2, bx + bw / 2, by + bh / 2};
                    iou_acc += iou(pb, ps.boxes_input_scale[gi]);
                    ++iou_n;
                }
            }
        }
        adam.step();
        result.curves.loss.push_back(iter_loss);
        result.curves.iou.push_back(iou_n > 0 ? iou_acc / iou_n : 0.0);

        if (iter % config.eval_interval == 0 || iter == config.total_iterations) {
            auto ev = evaluate_detector(net, val, config.anchors, config.eval_conf_threshold,
                                        config.nms_threshold);
            double m = ev.map50.value_or(0.0);
            result.curves.eval_iterations.push_back(iter);
            result.curves.map_values.push_back(m);
            if (m > result.best_map || result.best_iteration < 0) {
                result.best_map = m;
                result.best_iteration = iter;
                best_snapshot.clear();
                for (auto& buf : net.buffers()) best_snapshot.push_back(*buf.data);
            }
            if (config.early_stop_map && m >= *config.early_stop_map) break;
        }
    }

    if (!best_snapshot.empty()) {
        auto bufs = net.buffers();
        for (size_t i = 0; i < bufs.size(); ++i) *bufs[i].data = best_snapshot[i];
        net.sync_batchnorm_flags();
    }
    std::map<std::string, std::string> meta;
    meta["kind"] = "detector";
    meta["best_map"] = std::to_string(result.best_map);
    meta["best_iteration"] = std::to_string(result.best_iteration);
    meta["seed"] = std::to_string(config.seed);
    meta["input_size"] = std::to_string(config.input_size);
    std::string anchors_s;
    for (const auto& an : config.anchors)
        anchors_s += std::to_string(an.width) + "," + std::to_string(an.height) + ";";
    meta["anchors"] = anchors_s;
    result.best = checkpoint_from(net, meta);
    return result;
}

// ---------------------------------------------------------------------------
// inference

std::vector<Detection> detect(Network& net, const Image& frame, const std::vector<Anchor>& anchors,
                              double conf_threshold, double nms_threshold) {
    int in = net.spec().in_height;
    Image resized = resize_bilinear(frame, in, in);
    Tensor x = image_to_tensor(resized);
    auto grids = net.forward_grids(x, false);
    std::vector<Detection> all;
    for (auto& g : grids) {
        int stride = in / g.dim(3);
        auto dets = decode_predictions(g, anchors, stride, conf_threshold);
        all.insert(all.end(), dets.begin(), dets.end());
    }
    auto kept = nms(std::move(all), nms_threshold);
    double sx = static_cast<double>(frame.width) / in, sy = static_cast<double>(frame.height) / in;
    for (auto& d : kept) {
        d.box = BoundingBox{d.box.x_min * sx, d.box.y_min * sy, d.box.x_max * sx, d.box.y_max * sy}
                    .clamped(frame.width, frame.height);
    }
    return kept;
}

DetectorEvaluation evaluate_detector(Network& net, const std::vector<const LabeledImage*>& images,
                                     const std::vector<Anchor>& anchors, double conf_threshold,
                                     double nms_threshold) {
    std::vector<std::pair<int, Detection>> dets;
    std::vector<std::pair<int, BoundingBox>> gts;
    std::vector<std::vector<Detection>> per_image_dets;
    std::vector<std::vector<BoundingBox>> per_image_gts;
    for (size_t i = 0; i < images.size(); ++i) {
        auto d = detect(net, images[i]->pixels, anchors, conf_threshold, nms_threshold);
        for (const auto& det : d) dets.emplace_back(static_cast<int>(i), det);
        for (const auto& b : images[i]->boxes) gts.emplace_back(static_cast<int>(i), b);
        per_image_dets.push_back(std::move(d));
        per_image_gts.push_back(images[i]->boxes);
    }
    DetectorEvaluation ev;
    ev.map50 = average_precision_50(std::move(dets), gts).ap;
    ev.iou_summary = average_iou_summary(per_image_dets, per_image_gts);
    return ev;
}

}  // namespace finnet
