// Acceptance suite: one pass/fail line per criterion, exit 1 on any failure.
//
// Tolerances are pinned next to each criterion. Training-based criteria use
// fixed seeds so reruns are bitwise stable.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "finnet/augment.hpp"
#include "finnet/classifier.hpp"
#include "finnet/detector.hpp"
#include "finnet/gradcheck.hpp"
#include "finnet/metrics.hpp"
#include "finnet/pipeline.hpp"

using namespace finnet;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, bool passed, const std::string& detail) {
    std::printf("%s  criterion %2d: %s\n", passed ? "PASS" : "FAIL", criterion, detail.c_str());
    std::fflush(stdout);
    if (!passed) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// 1. gradient suite

void criterion_1() {
    auto t0 = std::chrono::steady_clock::now();
    auto reports = standard_gradchecks(11, 20);  // 20 random shapes per op
    double wall = seconds_since(t0);
    bool ok = !reports.empty() && wall <= 120.0;
    double worst = 0;
    for (const auto& r : reports) {
        ok = ok && r.passed && r.tolerance == 1e-4;
        worst = std::max(worst, r.max_rel_err);
    }
    report(1, ok, "gradcheck: " + std::to_string(reports.size()) + " ops, worst rel err " +
                      fmt(worst) + " (tol 1e-4), " + fmt(wall) + "s (budget 120s)");
}

// ---------------------------------------------------------------------------
// 2. classifier shape chain

void criterion_2() {
    NetworkSpec spec = build_cnn_senet(23);
    auto shapes = spec.validate();
    std::vector<Shape> pools, flattens;
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        if (spec.layers[i].kind == LayerKind::MaxPool) pools.push_back(shapes[i]);
        if (spec.layers[i].kind == LayerKind::Flatten) flattens.push_back(shapes[i]);
    }
    const std::vector<Shape> want = {{1, 32, 98, 98},
                                     {1, 64, 48, 48},
                                     {1, 64, 23, 23},
                                     {1, 128, 11, 11},
                                     {1, 256, 5, 5}};
    bool ok = pools == want && flattens.size() == 1 && flattens[0] == Shape{1, 6400};
    report(2, ok, "block outputs 98x98x32 / 48x48x64 / 23x23x64 / 11x11x128 / 5x5x256, flatten 6400");
}

// ---------------------------------------------------------------------------
// 3. SE ablation identity

void criterion_3() {
    Network net_se(build_cnn_senet(4), 1), net_plain(build_cnn_senet(4, 16, false), 2);
    auto se_bufs = net_se.buffers();
    for (auto& b : se_bufs) {
        if (b.name.find(".se.expand.weight") != std::string::npos)
            std::fill(b.data->begin(), b.data->end(), 0.0f);
        if (b.name.find(".se.expand.bias") != std::string::npos)
            std::fill(b.data->begin(), b.data->end(), 100.0f);  // sigmoid saturates to 1.0f
    }
    auto plain_bufs = net_plain.buffers();
    std::vector<NamedBuffer*> shared;
    for (auto& b : se_bufs)
        if (b.name.find(".se.") == std::string::npos) shared.push_back(&b);
    bool ok = shared.size() == plain_bufs.size();
    for (size_t i = 0; ok && i < shared.size(); ++i) {
        ok = shared[i]->shape == plain_bufs[i].shape;
        if (ok) *plain_bufs[i].data = *shared[i]->data;
    }
    Tensor x = Tensor::zeros({2, 3, 200, 200});  // dense batch norm needs batch >= 2
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& v : x.values()) v = u(gen);
    std::mt19937_64 r1(5), r2(5);
    ok = ok && net_se.forward(x, true, &r1).values() == net_plain.forward(x, true, &r2).values();
    report(3, ok, "all-ones excitation output equals the no-SE network bitwise");
}

// ---------------------------------------------------------------------------
// 4. overfit smoke test

void criterion_4() {
    auto t0 = std::chrono::steady_clock::now();
    Dataset ds = generate_synthetic_classification(4, 10, 48, 7);  // 40 images, all train
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch_size = 8;
    cfg.learning_rate = 0.001;
    cfg.seed = 7;
    cfg.stop_at_train_accuracy = 0.99;
    auto result = pretrain(ds, cfg);
    double wall = seconds_since(t0);
    double final_acc = result.history.empty() ? 0.0 : result.history.back().train_acc;
    bool ok = final_acc >= 0.99 && wall <= 300.0;
    report(4, ok, "overfit 4x10 synthetic: train acc " + fmt(final_acc) + " after " +
                      std::to_string(result.history.size()) + " epochs, " + fmt(wall) +
                      "s (needs >=0.99 within 200 epochs, 300s)");
}

// ---------------------------------------------------------------------------
// 5. transfer surgery

void criterion_5() {
    Network pre(build_cnn_senet(23), 5);
    for (auto& b : pre.buffers())
        for (auto& v : *b.data) v += 0.0625f;  // move away from init
    Checkpoint ckpt = checkpoint_from(pre);
    auto post = replace_head(ckpt, 4, 99);
    std::int64_t delta = pre.parameter_count() - post->parameter_count();

    size_t head = 0;
    for (size_t i = 0; i < post->spec().layers.size(); ++i)
        if (post->spec().layers[i].kind == LayerKind::Dense) head = i;
    std::string head_prefix = "L" + std::to_string(head) + ".dense.";
    bool copied = true;
    for (auto& b : post->buffers()) {
        if (b.name.rfind(head_prefix, 0) == 0) continue;
        const auto* e = ckpt.find(b.name);
        copied = copied && e != nullptr && *b.data == e->data;
    }
    bool ok = delta == 4883 && copied;
    report(5, ok, "23->4 head surgery: parameter delta " + std::to_string(delta) +
                      " (expect 4883), non-final weights bitwise " +
                      (copied ? "preserved" : "CHANGED"));
}

// ---------------------------------------------------------------------------
// 6. metric oracles

double ap_oracle(std::vector<std::pair<int, Detection>> dets,
                 const std::vector<std::pair<int, BoundingBox>>& gts) {
    std::stable_sort(dets.begin(), dets.end(),
                     [](const auto& a, const auto& b) { return a.second.score() > b.second.score(); });
    std::vector<bool> taken(gts.size(), false);
    std::vector<double> recall, precision;
    int tp = 0, fp = 0;
    for (const auto& [img, det] : dets) {
        int best = -1;
        double best_iou = 0.5;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (taken[g] || gts[g].first != img) continue;
            double v = iou(det.box, gts[g].second);
            if (v >= best_iou) {
                best_iou = v;
                best = static_cast<int>(g);
            }
        }
        if (best >= 0) {
            taken[static_cast<size_t>(best)] = true;
            ++tp;
        } else {
            ++fp;
        }
        recall.push_back(double(tp) / double(gts.size()));
        precision.push_back(double(tp) / double(tp + fp));
    }
    double sum = 0;
    const int G = static_cast<int>(gts.size());
    for (int k = 1; k <= G; ++k) {
        double level = double(k) / double(G), best_p = 0;
        for (size_t j = 0; j < recall.size(); ++j)
            if (recall[j] >= level - 1e-12) best_p = std::max(best_p, precision[j]);
        sum += best_p;
    }
    return sum / double(G);
}

void criterion_6() {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 40.0), score(0.01, 1.0);
    auto random_box = [&] {
        double x = u(rng), y = u(rng), w = 2 + u(rng) / 2, h = 2 + u(rng) / 2;
        return BoundingBox{x, y, x + w, y + h};
    };
    int nms_bad = 0, ap_bad = 0;
    for (int t = 0; t < 1000; ++t) {
        // NMS against the literal greedy definition
        std::vector<Detection> dets;
        int nd = static_cast<int>(rng() % 7);
        for (int i = 0; i < nd; ++i) dets.push_back({random_box(), score(rng)});
        double thr = 0.2 + 0.6 * score(rng);
        auto got = nms(dets, thr);
        std::vector<Detection> want;
        {
            auto sorted = dets;
            std::stable_sort(sorted.begin(), sorted.end(),
                             [](const Detection& a, const Detection& b) { return a.score() > b.score(); });
            for (const auto& d : sorted) {
                bool keep = true;
                for (const auto& k : want) keep = keep && iou(d.box, k.box) < thr;
                if (keep) want.push_back(d);
            }
        }
        bool same = got.size() == want.size();
        for (size_t i = 0; same && i < got.size(); ++i)
            same = got[i].box.x_min == want[i].box.x_min && got[i].score() == want[i].score();
        if (!same) ++nms_bad;

        // AP@50 against the recall-level oracle
        std::vector<std::pair<int, BoundingBox>> gts;
        std::vector<std::pair<int, Detection>> tagged;
        int ng = 1 + static_cast<int>(rng() % 4);
        for (int g = 0; g < ng; ++g) gts.emplace_back(0, random_box());
        for (int d = 0; d < nd; ++d) {
            BoundingBox b = rng() % 2 ? random_box() : gts[rng() % gts.size()].second;
            tagged.emplace_back(0, Detection{b, score(rng)});
        }
        auto got_ap = average_precision_50(tagged, gts);
        if (!got_ap.ap || std::abs(*got_ap.ap - ap_oracle(tagged, gts)) > 1e-9) ++ap_bad;
    }

    BoundingBox a{0, 0, 10, 10}, b{5, 5, 15, 15};
    bool hand = std::abs(iou(a, a) - 1.0) <= 1e-9 &&
                std::abs(iou(a, {20, 20, 30, 30})) <= 1e-9 &&
                std::abs(iou(a, b) - 1.0 / 7.0) <= 1e-9;
    bool ok = nms_bad == 0 && ap_bad == 0 && hand;
    report(6, ok, "1000 random instances: NMS mismatches " + std::to_string(nms_bad) +
                      ", AP mismatches " + std::to_string(ap_bad) +
                      "; IoU hand cases (1, 0, 1/7) " + (hand ? "exact" : "WRONG"));
}

// ---------------------------------------------------------------------------
// 7. gradient-accumulation equivalence

void criterion_7() {
    // batch-norm (batch statistics) and dropout (per-batch masks) are excluded
    // by construction: subdivided and monolithic passes would legitimately
    // differ through them
    NetworkSpec spec;
    spec.in_channels = 3;
    spec.in_height = spec.in_width = 16;
    spec.class_count = 5;
    spec.layers = {
        {.kind = LayerKind::Conv, .filters = 6, .kernel = 3, .stride = 1, .pad = Padding::Same},
        {.kind = LayerKind::LeakyRelu, .slope = 0.1},
        {.kind = LayerKind::MaxPool},
        {.kind = LayerKind::Conv, .filters = 8, .kernel = 3, .stride = 2, .pad = Padding::Same},
        {.kind = LayerKind::Relu},
        {.kind = LayerKind::Flatten},
        {.kind = LayerKind::Dense, .units = 5},
        {.kind = LayerKind::Softmax},
    };

    const int B = 64, subs = 8, sub_size = B / subs;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<float> xv(static_cast<size_t>(B) * 3 * 16 * 16);
    for (auto& v : xv) v = u(rng);
    std::vector<float> tv(static_cast<size_t>(B) * 5, 0.0f);
    for (int i = 0; i < B; ++i) tv[static_cast<size_t>(i) * 5 + rng() % 5] = 1.0f;

    Network accum(spec, 70), mono(spec, 70);

    auto params_a = accum.trainable_params();
    Adam<float> adam_a(params_a, {.learning_rate = 0.001f});
    adam_a.zero_grad();
    for (int s = 0; s < subs; ++s) {
        std::vector<float> xs(xv.begin() + static_cast<std::ptrdiff_t>(s) * sub_size * 3 * 16 * 16,
                              xv.begin() + static_cast<std::ptrdiff_t>(s + 1) * sub_size * 3 * 16 * 16);
        std::vector<float> ts(tv.begin() + static_cast<std::ptrdiff_t>(s) * sub_size * 5,
                              tv.begin() + static_cast<std::ptrdiff_t>(s + 1) * sub_size * 5);
        Tensor x = Tensor::from({sub_size, 3, 16, 16}, std::move(xs));
        Tensor target = Tensor::from({sub_size, 5}, std::move(ts));
        Tensor loss = categorical_cross_entropy(accum.forward(x, true), target);
        backward(smul(loss, static_cast<float>(sub_size) / static_cast<float>(B)));
    }
    adam_a.step();

    auto params_m = mono.trainable_params();
    Adam<float> adam_m(params_m, {.learning_rate = 0.001f});
    adam_m.zero_grad();
    Tensor x = Tensor::from({B, 3, 16, 16}, xv);
    Tensor target = Tensor::from({B, 5}, tv);
    backward(categorical_cross_entropy(mono.forward(x, true), target));
    adam_m.step();

    double worst = 0;
    auto ba = accum.buffers();
    auto bm = mono.buffers();
    for (size_t i = 0; i < ba.size(); ++i)
        for (size_t j = 0; j < ba[i].data->size(); ++j)
            worst = std::max(worst, std::abs(static_cast<double>((*ba[i].data)[j]) -
                                             static_cast<double>((*bm[i].data)[j])));
    bool ok = worst <= 1e-6;
    report(7, ok, "B=64 via 8 subdivisions vs monolithic: max parameter delta " + fmt(worst) +
                      " (tol 1e-6)");
}

// ---------------------------------------------------------------------------
// 8 + 10. desk-scale detector, then the end-to-end pipeline on its checkpoint

struct DeskDetector {
    bool trained_ok = false;
    fs::path ckpt_path;
    std::vector<Anchor> anchors;
};

DeskDetector criterion_8(const fs::path& tmp) {
    auto t0 = std::chrono::steady_clock::now();
    Dataset ds = generate_synthetic_detection(260, 96, 3, 8, 1, 3);
    for (size_t i = 0; i < ds.images.size(); ++i)
        ds.images[i].provenance = i < 200 ? Provenance::Train : Provenance::Val;

    DetectorTrainConfig cfg;
    cfg.preset = DetectorPreset::Tiny;
    cfg.input_size = 96;
    cfg.batch_size = 8;
    cfg.subdivisions = 1;
    cfg.total_iterations = 2000;
    cfg.burn_in_iterations = 0;
    cfg.base_lr = 0.002;
    cfg.eval_interval = 100;
    cfg.eval_conf_threshold = 0.05;
    cfg.anchors = {{19, 19}, {25, 25}, {32, 32}};
    cfg.seed = 8;
    cfg.box_weight = 5;  // localization dominates mAP@50 at this scale
    cfg.early_stop_map = 0.98;  // train well past the 0.90 gate; the pipeline reuses this checkpoint
    auto result = train_detector(ds, cfg);
    double wall = seconds_since(t0);

    double best_eval = 0;
    for (double m : result.curves.map_values) best_eval = std::max(best_eval, m);
    bool curves_ok = !result.curves.loss.empty() && result.curves.iou.size() == result.curves.loss.size() &&
                     !result.curves.map_values.empty() &&
                     moving_average(result.curves.loss, 25).size() == result.curves.loss.size();
    bool best_selected = result.best_map == best_eval && result.best_iteration > 0;
    bool ok = result.best_map >= 0.90 && wall <= 900.0 && curves_ok && best_selected;
    report(8, ok, "tiny detector on 200/60 synthetic: mAP@50 " + fmt(result.best_map) + " at iter " +
                      std::to_string(result.best_iteration) + ", " + fmt(wall) +
                      "s (needs >=0.90 within 2000 iters, 900s); curves+best-checkpoint " +
                      (curves_ok && best_selected ? "ok" : "MISSING"));

    DeskDetector out;
    out.trained_ok = ok;
    out.anchors = cfg.anchors;
    out.ckpt_path = tmp / "detector.fnck";
    save_checkpoint(result.best, out.ckpt_path.string());
    return out;
}

// ---------------------------------------------------------------------------
// 9. augmentation properties

void criterion_9() {
    Image img = Image::blank(24, 24);
    std::mt19937_64 pix(9);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(pix() % 256);
    bool identity = apply_affine(img, {}) == img;

    AugmentConfig flip_cfg;
    flip_cfg.rotation_range_degrees = 0;
    flip_cfg.shift_fraction = 0;
    flip_cfg.scale_min = flip_cfg.scale_max = 1;
    flip_cfg.shear_degrees = 0;
    flip_cfg.flip_probability = 0.5;
    std::mt19937_64 rng(90);
    int flips = 0;
    for (int i = 0; i < 10000; ++i)
        if (sample_affine(flip_cfg, 10, 10, rng).flip) ++flips;
    // 99% binomial CI for p=0.5, n=10000: 5000 +- 2.576*50 = [4871, 5129]
    bool ci = flips >= 4871 && flips <= 5129;

    Dataset base;
    base.kind = DatasetKind::Classification;
    base.class_names = {"a", "b"};
    for (int i = 0; i < 712 + 60; ++i) {
        LabeledImage im;
        im.id = "im" + std::to_string(i);
        im.label = i % 2;
        im.pixels = Image::blank(12, 12, static_cast<std::uint8_t>(i % 251));
        im.provenance = i < 712 ? Provenance::Train : (i % 2 ? Provenance::Val : Provenance::Test);
        base.images.push_back(std::move(im));
    }
    AugmentConfig exp_cfg;
    exp_cfg.expansion_factor = 3;
    Dataset big = expand_dataset(base, exp_cfg, 91);
    bool expansion = big.subset(Provenance::Train).size() == 2136 &&
                     big.subset(Provenance::Val).size() == base.subset(Provenance::Val).size() &&
                     big.subset(Provenance::Test).size() == base.subset(Provenance::Test).size();

    bool ok = identity && ci && expansion;
    report(9, ok, std::string("identity ") + (identity ? "bitwise" : "BROKEN") + ", flips " +
                      std::to_string(flips) + "/10000 in [4871,5129] " + (ci ? "yes" : "NO") +
                      ", expansion 712->" + std::to_string(big.subset(Provenance::Train).size()) +
                      " train (expect 2136), val/test " + (expansion ? "untouched" : "CHANGED"));
}

// ---------------------------------------------------------------------------
// 10. end-to-end pipeline

void criterion_10(const fs::path& tmp, const DeskDetector& det) {
    if (!det.trained_ok) {
        report(10, false, "skipped: the desk-scale detector (criterion 8) did not reach its gate");
        return;
    }
    // species classifier over the same three synthetic styles
    Dataset cls = generate_synthetic_classification(3, 30, 48, 10);
    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.batch_size = 8;
    cfg.learning_rate = 0.001;
    cfg.seed = 10;
    cfg.stop_at_train_accuracy = 0.995;
    auto trained = pretrain(cls, cfg);
    fs::path cls_path = tmp / "classifier.fnck";
    save_checkpoint(trained.checkpoint, cls_path.string());

    // the desk-scale detector localizes well but scores some fish low, so the
    // count-sensitive pipeline runs at a permissive confidence threshold
    PipelineConfig pc;
    pc.conf_threshold = 0.05;
    pc.nms_threshold = 0.25;
    pc.crop_margin = 0.15;
    Pipeline pipe = Pipeline::load(det.ckpt_path.string(), cls_path.string(), pc);

    Dataset frames = generate_synthetic_detection(20, 96, 3, 1010, 1, 3);
    int correct_frames = 0;
    bool sums_ok = true;
    for (const auto& im : frames.images) {
        FrameResult r = pipe.process(im.id, im.pixels);
        int counted = 0;
        for (const auto& [name, n] : r.species_counts) counted += n;
        sums_ok = sums_ok && counted == static_cast<int>(r.detections.size());

        std::map<std::string, int> truth;
        for (int s : im.box_classes) {
            char name[32];
            std::snprintf(name, sizeof name, "species_%02d", s);
            ++truth[name];
        }
        std::map<std::string, int> got;
        for (const auto& [name, n] : r.species_counts)
            if (n > 0) got[name] = n;
        if (got == truth) ++correct_frames;
    }
    bool ok = correct_frames >= 18 && sums_ok;  // >= 90% of 20 frames
    report(10, ok, "pipeline on 20 frames: " + std::to_string(correct_frames) +
                       "/20 frames with exact species counts (need >=18); counts sum to detections: " +
                       (sums_ok ? "always" : "VIOLATED"));
}

// ---------------------------------------------------------------------------
// 11. determinism / replay through the CLI

std::map<std::string, std::string> snapshot_dir(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::ifstream is(e.path(), std::ios::binary);
        out[fs::relative(e.path(), dir).string()] =
            std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
    }
    return out;
}

void criterion_11(const fs::path& tmp) {
    const char* cli = std::getenv("FINNET_CLI");
    if (!cli) {
        report(11, false, "FINNET_CLI is not set; cannot exercise manifest replay");
        return;
    }
    auto sh = [&](const std::string& cmd) { return std::system(cmd.c_str()) == 0; };
    std::string q = std::string("\"") + cli + "\"";
    bool ok = true;
    std::string detail;

    struct Run {
        std::string name, args;
    };
    fs::path data = tmp / "r-data";
    std::vector<Run> runs = {
        {"gen-synthetic", " gen-synthetic --kind=detection --images=8 --size=64 --styles=2"
                          " --min-fish=1 --max-fish=2 --seed=5 --out-dir=" + data.string()},
        {"gradcheck", " gradcheck --repeats=2 --seed=3 --out-dir=" + (tmp / "r-gc").string()},
        {"train-detector", " train-detector --data=" + (data / "dataset").string() +
                           " --preset=tiny --iterations=6 --batch-size=2 --subdivisions=1"
                           " --input-size=64 --burn-in=0 --eval-interval=3"
                           " '--anchors=12,12;24,24' --seed=5 --out-dir=" + (tmp / "r-det").string()},
    };
    for (const auto& r : runs) {
        fs::path out = r.args.substr(r.args.rfind('=') + 1);
        if (!sh(q + r.args + " > /dev/null")) {
            ok = false;
            detail += r.name + " failed to run; ";
            continue;
        }
        auto before = snapshot_dir(out);
        if (!sh(q + " replay " + (out / "manifest.txt").string() + " > /dev/null")) {
            ok = false;
            detail += r.name + " replay failed; ";
            continue;
        }
        auto after = snapshot_dir(out);
        if (before != after) {
            ok = false;
            detail += r.name + " outputs differ after replay; ";
        }
    }
    if (detail.empty()) detail = "gen-synthetic, gradcheck, train-detector all replay bitwise";
    report(11, ok, detail);
}

}  // namespace

int main() {
    fs::path tmp = fs::temp_directory_path() /
                   ("finnet-acceptance-" + std::to_string(std::random_device{}()));
    fs::create_directories(tmp);

    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    DeskDetector det = criterion_8(tmp);
    criterion_9();
    criterion_10(tmp, det);
    criterion_11(tmp);

    fs::remove_all(tmp);
    if (g_failures > 0) {
        std::printf("%d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all 11 criteria passed\n");
    return 0;
}
