// Command-line surface for the fish detection/classification library.
//
// Every run writes a manifest (normalized arguments + input checkpoint
// checksums) into the output directory; `finnet replay <manifest>` re-runs
// it and reproduces all output files bitwise.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "finnet/augment.hpp"
#include "finnet/classifier.hpp"
#include "finnet/detector.hpp"
#include "finnet/gradcheck.hpp"
#include "finnet/pipeline.hpp"

namespace fs = std::filesystem;
using namespace finnet;

namespace {

int run(const std::vector<std::string>& args);  // forward, for replay

struct CommonOpts {
    std::uint64_t seed = 0;
    std::string out_dir = "out";
};

void add_common(CLI::App* sub, CommonOpts& c) {
    sub->add_option("--seed", c.seed, "RNG seed");
    sub->add_option("--out-dir", c.out_dir, "directory for all output files");
    sub->set_config("--config", "", "plain-text key=value file; flags override it");
}

/// Re-serializes every parsed option (command line or config file) as
/// `--name=value` tokens, so a manifest replay is independent of the
/// original config file.
std::vector<std::string> normalized_tokens(CLI::App* sub) {
    std::vector<std::string> tokens{sub->get_name()};
    bool have_seed = false, have_out = false;
    for (const auto* opt : sub->get_options()) {
        std::string name = opt->get_name();
        if (name == "--help" || name == "--config") continue;
        if (opt->count() == 0) continue;
        have_seed = have_seed || name == "--seed";
        have_out = have_out || name == "--out-dir";
        for (const auto& r : opt->results()) tokens.push_back(name + "=" + r);
    }
    return tokens;
}

void write_manifest(const std::string& out_dir, std::vector<std::string> tokens,
                    const CommonOpts& common, const std::vector<std::string>& ckpt_paths) {
    bool have_seed = false, have_out = false;
    for (const auto& t : tokens) {
        have_seed = have_seed || t.rfind("--seed=", 0) == 0;
        have_out = have_out || t.rfind("--out-dir=", 0) == 0;
    }
    if (!have_seed) tokens.push_back("--seed=" + std::to_string(common.seed));
    if (!have_out) tokens.push_back("--out-dir=" + common.out_dir);
    std::ofstream os(out_dir + "/manifest.txt");
    if (!os) throw Error("cannot write manifest in " + out_dir);
    os << "finnet-manifest v1\n";
    for (const auto& t : tokens) os << "argv\t" << t << '\n';
    for (const auto& p : ckpt_paths) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%08x", load_checkpoint(p).payload_checksum());
        os << "ckpt\t" << p << '\t' << buf << '\n';
    }
}

void ensure_out(const std::string& dir) { fs::create_directories(dir); }

Dataset load_any_dataset(const std::string& root) {
    if (fs::exists(fs::path(root) / "images")) return load_detection_dataset(root);
    return load_classification_dataset(root);
}

void split_cli(Dataset& ds, double train_frac, double val_frac, double test_frac,
               std::uint64_t seed) {
    split_dataset(ds, train_frac, val_frac, test_frac, seed,
                  ds.kind == DatasetKind::Classification);
}

std::vector<const LabeledImage*> select_split(const Dataset& ds, const std::string& split) {
    if (split == "all") {
        std::vector<const LabeledImage*> out;
        for (const auto& im : ds.images) out.push_back(&im);
        return out;
    }
    Provenance p = split == "train" ? Provenance::Train
                   : split == "val" ? Provenance::Val
                                    : Provenance::Test;
    auto out = ds.subset(p);
    FN_CHECK(!out.empty(), "split '" + split + "' is empty");
    return out;
}

std::vector<Anchor> parse_anchors(const std::string& text) {
    std::vector<Anchor> anchors;
    std::istringstream is(text);
    std::string pair;
    while (std::getline(is, pair, ';')) {
        if (pair.empty()) continue;
        auto comma = pair.find(',');
        FN_CHECK(comma != std::string::npos, "anchors must be 'w,h;w,h;...'");
        anchors.push_back({std::stod(pair.substr(0, comma)), std::stod(pair.substr(comma + 1))});
    }
    return anchors;
}

/// Per-epoch metrics with the timing column zeroed: wall-clock values are
/// printed on stdout instead so replayed runs stay bitwise identical.
void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open metrics file: " + path);
    os << "epoch,train_loss,train_acc,val_loss,val_acc,wall_seconds\n";
    for (const auto& r : history)
        os << r.epoch << ',' << r.train_loss << ',' << r.train_acc << ',' << r.val_loss << ','
           << r.val_acc << ",0\n";
}

void print_history_tail(const std::vector<EpochRecord>& history) {
    if (history.empty()) return;
    const auto& r = history.back();
    double total = 0;
    for (const auto& e : history) total += e.wall_seconds;
    std::printf("epochs run        %d (%.1fs wall)\n", r.epoch, total);
    std::printf("final train acc   %.4f  loss %.4f\n", r.train_acc, r.train_loss);
    std::printf("final val acc     %.4f  loss %.4f\n", r.val_acc, r.val_loss);
}

void write_confusion_csv(const std::string& path, const EvaluationReport& rep,
                         const std::vector<std::string>& names) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open output file: " + path);
    os << "true_class";
    for (const auto& n : names) os << ',' << n;
    os << '\n';
    for (size_t i = 0; i < rep.confusion.size(); ++i) {
        os << names[i];
        for (auto v : rep.confusion[i]) os << ',' << v;
        os << '\n';
    }
}

// -----------------------------------------------------------------------
// subcommand bodies

int cmd_gen_synthetic(const CommonOpts& common, const std::string& kind, int classes,
                      int per_class, int images, int size, int styles, int min_fish,
                      int max_fish) {
    ensure_out(common.out_dir);
    Dataset ds = kind == "detection"
                     ? generate_synthetic_detection(images, size, styles, common.seed, min_fish,
                                                    max_fish)
                     : generate_synthetic_classification(classes, per_class, size, common.seed);
    std::string root = common.out_dir + "/dataset";
    save_dataset(ds, root);
    std::printf("generated %zu %s images into %s\n", ds.images.size(), kind.c_str(), root.c_str());
    return 0;
}

int cmd_pretrain(const CommonOpts& common, const std::string& data, TrainConfig cfg,
                 double train_frac, double val_frac, double test_frac) {
    ensure_out(common.out_dir);
    Dataset ds = load_classification_dataset(data);
    split_cli(ds, train_frac, val_frac, test_frac, common.seed);
    cfg.seed = common.seed;
    auto result = pretrain(ds, cfg);
    save_checkpoint(result.checkpoint, common.out_dir + "/classifier.fnck");
    write_history_csv(common.out_dir + "/metrics.csv", result.history);
    std::printf("pretrained on %zu images, %zu classes\n", ds.images.size(),
                ds.class_names.size());
    std::printf("selected epoch    %d (best validation)\n", result.selected_epoch);
    print_history_tail(result.history);
    std::printf("checkpoint        %s/classifier.fnck\n", common.out_dir.c_str());
    return 0;
}

int cmd_posttrain(const CommonOpts& common, const std::string& pretrained,
                  const std::string& data, TrainConfig cfg, double train_frac, double val_frac,
                  double test_frac, bool augment, const AugmentConfig& aug) {
    ensure_out(common.out_dir);
    Dataset ds = load_classification_dataset(data);
    split_cli(ds, train_frac, val_frac, test_frac, common.seed);
    if (augment) ds = expand_dataset(ds, aug, common.seed);
    cfg.seed = common.seed;
    Checkpoint base = load_checkpoint(pretrained);
    auto result = posttrain(base, ds, cfg);
    save_checkpoint(result.checkpoint, common.out_dir + "/classifier.fnck");
    write_history_csv(common.out_dir + "/metrics.csv", result.history);
    std::printf("fine-tuned on %zu images (%saugmented), %zu classes\n", ds.images.size(),
                augment ? "" : "not ", ds.class_names.size());
    std::printf("selected epoch    %d\n", result.selected_epoch);
    print_history_tail(result.history);
    std::printf("checkpoint        %s/classifier.fnck\n", common.out_dir.c_str());
    return 0;
}

int cmd_train_detector(const CommonOpts& common, const std::string& data,
                       DetectorTrainConfig cfg, double train_frac, double val_frac,
                       double test_frac, int ma_window) {
    ensure_out(common.out_dir);
    Dataset ds = load_detection_dataset(data);
    split_cli(ds, train_frac, val_frac, test_frac, common.seed);
    cfg.seed = common.seed;
    if (cfg.input_size == 0) cfg.input_size = cfg.preset == DetectorPreset::Tiny ? 128 : 608;
    if (cfg.anchors.empty())
        cfg.anchors = cfg.preset == DetectorPreset::Tiny
                          ? std::vector<Anchor>{{16, 16}, {32, 32}, {64, 64}}
                          : default_anchors();
    auto t0 = std::chrono::steady_clock::now();
    auto result = train_detector(ds, cfg);
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    save_checkpoint(result.best, common.out_dir + "/detector.fnck");
    {
        std::ofstream os(common.out_dir + "/curves.csv");
        auto loss_ma = moving_average(result.curves.loss, ma_window);
        auto iou_ma = moving_average(result.curves.iou, ma_window);
        os << "iteration,loss,loss_ma,iou,iou_ma\n";
        for (size_t i = 0; i < result.curves.loss.size(); ++i)
            os << i + 1 << ',' << result.curves.loss[i] << ',' << loss_ma[i] << ','
               << result.curves.iou[i] << ',' << iou_ma[i] << '\n';
    }
    {
        std::ofstream os(common.out_dir + "/map.csv");
        os << "iteration,map50\n";
        for (size_t i = 0; i < result.curves.eval_iterations.size(); ++i)
            os << result.curves.eval_iterations[i] << ',' << result.curves.map_values[i] << '\n';
    }
    std::printf("trained %zu iterations on %zu images (%.1fs wall)\n", result.curves.loss.size(),
                ds.images.size(), wall);
    std::printf("best mAP@50       %.4f at iteration %d\n", result.best_map,
                result.best_iteration);
    std::printf("checkpoint        %s/detector.fnck\n", common.out_dir.c_str());
    return 0;
}

int cmd_evaluate_classifier(const CommonOpts& common, const std::string& ckpt_path,
                            const std::string& data, const std::string& split, double train_frac,
                            double val_frac, double test_frac) {
    ensure_out(common.out_dir);
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    auto net = network_from_checkpoint(ckpt);
    Dataset ds = load_classification_dataset(data);
    if (split != "all") split_cli(ds, train_frac, val_frac, test_frac, common.seed);
    if (static_cast<int>(ds.class_names.size()) != net->spec().class_count)
        throw Error("dataset has " + std::to_string(ds.class_names.size()) +
                    " classes but the checkpoint head has " +
                    std::to_string(net->spec().class_count));
    auto rep = evaluate_classifier(*net, select_split(ds, split));
    write_confusion_csv(common.out_dir + "/confusion.csv", rep, ds.class_names);
    {
        std::ofstream os(common.out_dir + "/predictions.csv");
        os << "id,true_class,predicted_class,probability\n";
        for (const auto& p : rep.predictions)
            os << p.id << ',' << ds.class_names[static_cast<size_t>(p.true_class)] << ','
               << ds.class_names[static_cast<size_t>(p.predicted)] << ',' << p.probability
               << '\n';
    }
    std::printf("evaluated %zu images (%s split)\n", rep.predictions.size(), split.c_str());
    std::printf("accuracy          %.4f\n", rep.accuracy);
    return 0;
}

int cmd_evaluate_detector(const CommonOpts& common, const std::string& ckpt_path,
                          const std::string& data, const std::string& split, double conf,
                          double nms_thr, double train_frac, double val_frac, double test_frac) {
    ensure_out(common.out_dir);
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    auto net = network_from_checkpoint(ckpt);
    auto anchors = anchors_from_metadata(ckpt.metadata);
    Dataset ds = load_detection_dataset(data);
    if (split != "all") split_cli(ds, train_frac, val_frac, test_frac, common.seed);
    auto ev = evaluate_detector(*net, select_split(ds, split), anchors, conf, nms_thr);
    {
        std::ofstream os(common.out_dir + "/evaluation.csv");
        os << "metric,value\n";
        os << "map50," << (ev.map50 ? std::to_string(*ev.map50) : "undefined") << '\n';
        os << "average_iou,"
           << (ev.iou_summary.average_iou ? std::to_string(*ev.iou_summary.average_iou)
                                          : "undefined")
           << '\n';
        os << "correctness_ratio,"
           << (ev.iou_summary.correctness_ratio
                   ? std::to_string(*ev.iou_summary.correctness_ratio)
                   : "undefined")
           << '\n';
    }
    std::printf("evaluated %s split\n", split.c_str());
    std::printf("mAP@50            %s\n", ev.map50 ? std::to_string(*ev.map50).c_str() : "n/a");
    std::printf("average IoU       %s\n",
                ev.iou_summary.average_iou ? std::to_string(*ev.iou_summary.average_iou).c_str()
                                           : "n/a");
    return 0;
}

int cmd_augment(const CommonOpts& common, const std::string& data, const AugmentConfig& aug) {
    ensure_out(common.out_dir);
    Dataset ds = load_any_dataset(data);
    FN_CHECK(ds.kind == DatasetKind::Classification,
             "augmentation applies to classification datasets");
    for (auto& im : ds.images)
        if (im.provenance == Provenance::Unsplit) im.provenance = Provenance::Train;
    size_t before = ds.images.size();
    Dataset out = expand_dataset(ds, aug, common.seed);
    save_dataset(out, common.out_dir + "/dataset");
    std::printf("expanded %zu -> %zu images (factor %d) into %s/dataset\n", before,
                out.images.size(), aug.expansion_factor, common.out_dir.c_str());
    return 0;
}

int cmd_run_pipeline(const CommonOpts& common, const std::string& frames,
                     const std::string& detector, const std::string& classifier,
                     PipelineConfig cfg) {
    ensure_out(common.out_dir);
    Pipeline pipe = Pipeline::load(detector, classifier, cfg);
    std::vector<fs::path> paths;
    for (const auto& e : fs::directory_iterator(frames)) {
        auto ext = e.path().extension().string();
        if (ext == ".png" || ext == ".ppm") paths.push_back(e.path());
    }
    FN_CHECK(!paths.empty(), "no .png/.ppm frames found in " + frames);
    std::sort(paths.begin(), paths.end());
    std::vector<FrameResult> results;
    for (const auto& p : paths)
        results.push_back(pipe.process(p.filename().string(), read_image(p.string())));
    write_frame_results(results, pipe.class_names(), common.out_dir + "/counts.csv",
                        common.out_dir + "/detections.csv");
    size_t total = 0;
    for (const auto& r : results) total += r.detections.size();
    std::printf("processed %zu frames, %zu detections\n", results.size(), total);
    std::printf("counts            %s/counts.csv\n", common.out_dir.c_str());
    std::printf("detections        %s/detections.csv\n", common.out_dir.c_str());
    return 0;
}

int cmd_gradcheck(const CommonOpts& common, int repeats) {
    ensure_out(common.out_dir);
    auto reports = standard_gradchecks(common.seed, repeats);
    std::ofstream os(common.out_dir + "/gradcheck.csv");
    os << "op,max_rel_err,tolerance,status\n";
    bool ok = true;
    for (const auto& r : reports) {
        os << r.name << ',' << r.max_rel_err << ',' << r.tolerance << ','
           << (r.passed ? "pass" : "fail") << '\n';
        std::printf("%-22s max rel err %.3e  %s\n", r.name.c_str(), r.max_rel_err,
                    r.passed ? "pass" : "FAIL");
        ok = ok && r.passed;
    }
    return ok ? 0 : 2;
}

int cmd_replay(const std::string& manifest_path) {
    std::ifstream is(manifest_path);
    if (!is) throw Error("cannot open manifest: " + manifest_path);
    std::string line;
    FN_CHECK(std::getline(is, line) && line == "finnet-manifest v1",
             "unrecognized manifest header in " + manifest_path);
    std::vector<std::string> args;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto tab = line.find('\t');
        FN_CHECK(tab != std::string::npos, "malformed manifest line: " + line);
        std::string key = line.substr(0, tab), rest = line.substr(tab + 1);
        if (key == "argv") {
            args.push_back(rest);
        } else if (key == "ckpt") {
            auto tab2 = rest.find('\t');
            FN_CHECK(tab2 != std::string::npos, "malformed manifest line: " + line);
            std::string path = rest.substr(0, tab2);
            char buf[16];
            std::snprintf(buf, sizeof buf, "%08x", load_checkpoint(path).payload_checksum());
            if (rest.substr(tab2 + 1) != buf)
                throw Error("checkpoint " + path + " changed since the manifest was written");
        } else {
            throw Error("unrecognized manifest key: " + key);
        }
    }
    FN_CHECK(!args.empty(), "manifest lists no arguments");
    return run(args);
}

// -----------------------------------------------------------------------

int run(const std::vector<std::string>& args) {
    CLI::App app{"two-stage fish detection and species classification toolkit"};
    app.require_subcommand(1);

    CommonOpts common;

    // gen-synthetic
    auto* gen = app.add_subcommand("gen-synthetic", "generate a synthetic desk-scale dataset");
    std::string gen_kind = "classification";
    int gen_classes = 4, gen_per_class = 10, gen_images = 40, gen_size = 64, gen_styles = 2;
    int gen_min_fish = 1, gen_max_fish = 4;
    gen->add_option("--kind", gen_kind, "classification|detection")
        ->check(CLI::IsMember({"classification", "detection"}));
    gen->add_option("--classes", gen_classes, "classification class count");
    gen->add_option("--per-class", gen_per_class, "images per class");
    gen->add_option("--images", gen_images, "detection frame count");
    gen->add_option("--size", gen_size, "square image extent");
    gen->add_option("--styles", gen_styles, "detection species style count");
    gen->add_option("--min-fish", gen_min_fish, "minimum fish per frame");
    gen->add_option("--max-fish", gen_max_fish, "maximum fish per frame");
    add_common(gen, common);

    // shared training knobs
    TrainConfig tc;
    double train_frac = 0.7, val_frac = 0.15, test_frac = 0.15;
    double stop_train_acc = -1;
    bool no_se = false;
    auto add_cls_train = [&](CLI::App* sub) {
        sub->add_option("--epochs", tc.epochs, "training epochs");
        sub->add_option("--batch-size", tc.batch_size, "mini-batch size");
        sub->add_option("--lr", tc.learning_rate, "Adam learning rate");
        sub->add_flag("--no-se", no_se, "drop the SE recalibration stage");
        sub->add_option("--se-ratio", tc.se_ratio, "SE reduction ratio");
        sub->add_option("--train-frac", train_frac, "training split fraction");
        sub->add_option("--val-frac", val_frac, "validation split fraction");
        sub->add_option("--test-frac", test_frac, "test split fraction");
        sub->add_option("--stop-train-acc", stop_train_acc,
                        "stop once training accuracy reaches this");
    };

    auto* pre = app.add_subcommand("pretrain", "train the CNN-SENet classifier from scratch");
    std::string pre_data;
    pre->add_option("--data", pre_data, "classification dataset root")->required();
    add_cls_train(pre);
    add_common(pre, common);

    auto* post = app.add_subcommand("posttrain", "head surgery + fine-tune on a new dataset");
    std::string post_data, post_pretrained, post_selection = "final";
    bool post_augment = false;
    AugmentConfig aug;
    post->add_option("--data", post_data, "classification dataset root")->required();
    post->add_option("--pretrained", post_pretrained, "pre-trained checkpoint")->required();
    post->add_option("--selection", post_selection, "best|final checkpoint selection")
        ->check(CLI::IsMember({"best", "final"}));
    post->add_flag("--augment", post_augment, "expand the training split before fine-tuning");
    add_cls_train(post);
    auto add_aug_opts = [&](CLI::App* sub) {
        sub->add_option("--expansion", aug.expansion_factor, "training split expansion factor");
        sub->add_option("--rotation", aug.rotation_range_degrees, "rotation range, degrees");
        sub->add_option("--shift", aug.shift_fraction, "shift range, fraction of extent");
        sub->add_option("--scale-min", aug.scale_min, "minimum scale factor");
        sub->add_option("--scale-max", aug.scale_max, "maximum scale factor");
        sub->add_option("--shear", aug.shear_degrees, "shear range, degrees");
        sub->add_option("--flip-prob", aug.flip_probability, "horizontal flip probability");
    };
    add_aug_opts(post);
    add_common(post, common);

    auto* det = app.add_subcommand("train-detector", "train the YOLO-style fish detector");
    DetectorTrainConfig dc;
    std::string det_data, det_preset = "tiny", det_anchors;
    int ma_window = 25;
    dc.input_size = 0;  // resolved from the preset unless given
    det->add_option("--data", det_data, "detection dataset root")->required();
    det->add_option("--preset", det_preset, "tiny|darknet53")
        ->check(CLI::IsMember({"tiny", "darknet53"}));
    det->add_option("--iterations", dc.total_iterations, "training iterations");
    det->add_option("--batch-size", dc.batch_size, "effective batch size");
    det->add_option("--subdivisions", dc.subdivisions, "gradient-accumulation subdivisions");
    det->add_option("--input-size", dc.input_size, "network input extent");
    det->add_option("--burn-in", dc.burn_in_iterations, "burn-in iterations");
    det->add_option("--burn-in-lr", dc.burn_in_lr, "burn-in learning rate");
    det->add_option("--lr", dc.base_lr, "post-burn-in learning rate");
    det->add_option("--eval-interval", dc.eval_interval, "iterations between validation runs");
    det->add_option("--conf", dc.conf_threshold, "confidence threshold");
    det->add_option("--nms", dc.nms_threshold, "NMS IoU threshold");
    det->add_option("--eval-conf", dc.eval_conf_threshold, "evaluation confidence threshold");
    det->add_option("--anchors", det_anchors, "anchor priors 'w,h;w,h;...'");
    double early_stop_map = -1;
    det->add_option("--early-stop-map", early_stop_map, "stop once validation mAP reaches this");
    det->add_option("--ma-window", ma_window, "moving-average window for curve files");
    det->add_option("--train-frac", train_frac, "training split fraction");
    det->add_option("--val-frac", val_frac, "validation split fraction");
    det->add_option("--test-frac", test_frac, "test split fraction");
    add_common(det, common);

    auto* evc = app.add_subcommand("evaluate-classifier", "accuracy + confusion matrix");
    std::string evc_ckpt, evc_data, evc_split = "all";
    evc->add_option("--checkpoint", evc_ckpt, "classifier checkpoint")->required();
    evc->add_option("--data", evc_data, "classification dataset root")->required();
    evc->add_option("--split", evc_split, "all|train|val|test")
        ->check(CLI::IsMember({"all", "train", "val", "test"}));
    evc->add_option("--train-frac", train_frac, "training split fraction");
    evc->add_option("--val-frac", val_frac, "validation split fraction");
    evc->add_option("--test-frac", test_frac, "test split fraction");
    add_common(evc, common);

    auto* evd = app.add_subcommand("evaluate-detector", "mAP@50 + matched-IoU summary");
    std::string evd_ckpt, evd_data, evd_split = "all";
    double evd_conf = 0.25, evd_nms = 0.45;
    evd->add_option("--checkpoint", evd_ckpt, "detector checkpoint")->required();
    evd->add_option("--data", evd_data, "detection dataset root")->required();
    evd->add_option("--split", evd_split, "all|train|val|test")
        ->check(CLI::IsMember({"all", "train", "val", "test"}));
    evd->add_option("--conf", evd_conf, "confidence threshold");
    evd->add_option("--nms", evd_nms, "NMS IoU threshold");
    evd->add_option("--train-frac", train_frac, "training split fraction");
    evd->add_option("--val-frac", val_frac, "validation split fraction");
    evd->add_option("--test-frac", test_frac, "test split fraction");
    add_common(evd, common);

    auto* augc = app.add_subcommand("augment", "expand a classification dataset on disk");
    std::string aug_data;
    augc->add_option("--data", aug_data, "classification dataset root")->required();
    add_aug_opts(augc);
    add_common(augc, common);

    auto* pipe = app.add_subcommand("run-pipeline", "detect then classify an image sequence");
    std::string pipe_frames, pipe_detector, pipe_classifier;
    PipelineConfig pc;
    pipe->add_option("--frames", pipe_frames, "directory of ordered frame images")->required();
    pipe->add_option("--detector", pipe_detector, "detector checkpoint")->required();
    pipe->add_option("--classifier", pipe_classifier, "classifier checkpoint")->required();
    pipe->add_option("--conf", pc.conf_threshold, "confidence threshold");
    pipe->add_option("--nms", pc.nms_threshold, "NMS IoU threshold");
    pipe->add_option("--crop-margin", pc.crop_margin, "context margin, fraction of box extent");
    add_common(pipe, common);

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    int gc_repeats = 20;
    gc->add_option("--repeats", gc_repeats, "random shape draws per op");
    add_common(gc, common);

    auto* rep = app.add_subcommand("replay", "re-run a recorded manifest");
    std::string rep_manifest;
    rep->add_option("manifest", rep_manifest, "manifest file from a previous run")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exit 0
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        std::cerr << "run 'finnet --help' for the command list\n";
        return 1;
    }

    CLI::App* sub = app.get_subcommands().front();
    if (sub == rep) return cmd_replay(rep_manifest);

    std::vector<std::string> ckpt_inputs;
    if (sub == post) ckpt_inputs = {post_pretrained};
    if (sub == evc) ckpt_inputs = {evc_ckpt};
    if (sub == evd) ckpt_inputs = {evd_ckpt};
    if (sub == pipe) ckpt_inputs = {pipe_detector, pipe_classifier};

    tc.with_se = !no_se;
    if (stop_train_acc >= 0) tc.stop_at_train_accuracy = stop_train_acc;
    if (early_stop_map >= 0) dc.early_stop_map = early_stop_map;
    dc.preset = det_preset == "darknet53" ? DetectorPreset::Darknet53 : DetectorPreset::Tiny;
    if (!det_anchors.empty()) dc.anchors = parse_anchors(det_anchors);
    tc.selection = post_selection == "best" ? CheckpointSelection::BestValidation
                                            : CheckpointSelection::FinalEpoch;

    int rc;
    if (sub == gen)
        rc = cmd_gen_synthetic(common, gen_kind, gen_classes, gen_per_class, gen_images, gen_size,
                               gen_styles, gen_min_fish, gen_max_fish);
    else if (sub == pre) {
        tc.selection = CheckpointSelection::BestValidation;
        rc = cmd_pretrain(common, pre_data, tc, train_frac, val_frac, test_frac);
    } else if (sub == post)
        rc = cmd_posttrain(common, post_pretrained, post_data, tc, train_frac, val_frac,
                           test_frac, post_augment, aug);
    else if (sub == det)
        rc = cmd_train_detector(common, det_data, dc, train_frac, val_frac, test_frac, ma_window);
    else if (sub == evc)
        rc = cmd_evaluate_classifier(common, evc_ckpt, evc_data, evc_split, train_frac, val_frac,
                                     test_frac);
    else if (sub == evd)
        rc = cmd_evaluate_detector(common, evd_ckpt, evd_data, evd_split, evd_conf, evd_nms,
                                   train_frac, val_frac, test_frac);
    else if (sub == augc)
        rc = cmd_augment(common, aug_data, aug);
    else if (sub == pipe)
        rc = cmd_run_pipeline(common, pipe_frames, pipe_detector, pipe_classifier, pc);
    else
        rc = cmd_gradcheck(common, gc_repeats);

    if (rc == 0) write_manifest(common.out_dir, normalized_tokens(sub), common, ckpt_inputs);
    return rc;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        return run(args);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
