// Python bindings for the main library operations. Images cross the boundary
// as HxWx3 uint8 numpy arrays, boxes as (x_min, y_min, x_max, y_max) tuples.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "finnet/augment.hpp"
#include "finnet/classifier.hpp"
#include "finnet/detector.hpp"
#include "finnet/gradcheck.hpp"
#include "finnet/pipeline.hpp"

namespace py = pybind11;
using namespace finnet;

namespace {

Image image_from_array(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 3 || a.shape(2) != 3) throw Error("image array must be HxWx3 uint8");
    Image img = Image::blank(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::memcpy(img.pixels.data(), a.data(), img.pixels.size());
    return img;
}

py::array_t<std::uint8_t> array_from_image(const Image& img) {
    py::array_t<std::uint8_t> a({img.height, img.width, 3});
    std::memcpy(a.mutable_data(), img.pixels.data(), img.pixels.size());
    return a;
}

BoundingBox box_from_tuple(const std::array<double, 4>& t) { return {t[0], t[1], t[2], t[3]}; }
std::array<double, 4> tuple_from_box(const BoundingBox& b) { return {b.x_min, b.y_min, b.x_max, b.y_max}; }

}  // namespace

PYBIND11_MODULE(_finnet, m) {
    m.doc() = "two-stage fish detection / species classification library";

    py::register_exception<Error>(m, "FinnetError");

    // boxes and metrics --------------------------------------------------
    m.def("iou", [](std::array<double, 4> a, std::array<double, 4> b) {
        return iou(box_from_tuple(a), box_from_tuple(b));
    });
    m.def(
        "nms",
        [](const std::vector<std::pair<std::array<double, 4>, double>>& dets, double thr) {
            std::vector<Detection> in;
            for (const auto& [box, score] : dets) in.push_back({box_from_tuple(box), score});
            std::vector<std::pair<std::array<double, 4>, double>> out;
            for (const auto& d : nms(in, thr)) out.emplace_back(tuple_from_box(d.box), d.score());
            return out;
        },
        py::arg("detections"), py::arg("iou_threshold"));
    m.def(
        "average_precision_50",
        [](const std::vector<std::tuple<int, std::array<double, 4>, double>>& dets,
           const std::vector<std::pair<int, std::array<double, 4>>>& gts) -> std::optional<double> {
            std::vector<std::pair<int, Detection>> d;
            for (const auto& [img, box, score] : dets)
                d.emplace_back(img, Detection{box_from_tuple(box), score});
            std::vector<std::pair<int, BoundingBox>> g;
            for (const auto& [img, box] : gts) g.emplace_back(img, box_from_tuple(box));
            return average_precision_50(d, g).ap;
        },
        py::arg("detections"), py::arg("ground_truths"));
    m.def("moving_average", &moving_average, py::arg("values"), py::arg("window"));

    // synthetic data ------------------------------------------------------
    py::class_<LabeledImage>(m, "LabeledImage")
        .def_readonly("id", &LabeledImage::id)
        .def_readonly("label", &LabeledImage::label)
        .def_readonly("box_classes", &LabeledImage::box_classes)
        .def_property_readonly("pixels", [](const LabeledImage& im) { return array_from_image(im.pixels); })
        .def_property_readonly("boxes", [](const LabeledImage& im) {
            std::vector<std::array<double, 4>> out;
            for (const auto& b : im.boxes) out.push_back(tuple_from_box(b));
            return out;
        });
    py::class_<Dataset>(m, "Dataset")
        .def_readonly("class_names", &Dataset::class_names)
        .def_readonly("images", &Dataset::images)
        .def("save", [](const Dataset& ds, const std::string& root) { save_dataset(ds, root); });
    m.def("generate_synthetic_classification", &generate_synthetic_classification,
          py::arg("classes"), py::arg("images_per_class"), py::arg("image_size"), py::arg("seed"));
    m.def("generate_synthetic_detection", &generate_synthetic_detection, py::arg("images"),
          py::arg("image_size"), py::arg("styles"), py::arg("seed"), py::arg("min_fish") = 1,
          py::arg("max_fish") = 4);
    m.def("load_classification_dataset", &load_classification_dataset);
    m.def("load_detection_dataset", &load_detection_dataset);
    m.def(
        "split_dataset",
        [](Dataset& ds, double train, double val, double test, std::uint64_t seed) {
            split_dataset(ds, train, val, test, seed);
        },
        py::arg("dataset"), py::arg("train"), py::arg("val"), py::arg("test"), py::arg("seed"));

    // networks and checkpoints -------------------------------------------
    py::class_<Network>(m, "Network")
        .def(py::init([](int classes, std::uint64_t seed) {
                 return Network(build_cnn_senet(classes), seed);
             }),
             py::arg("classes"), py::arg("seed"))
        .def("parameter_count", &Network::parameter_count)
        .def("classify", [](Network& net, const py::array_t<std::uint8_t>& img) {
            return classify(net, image_from_array(img));
        });
    m.def("network_parameter_count", [](int classes, bool with_se) {
        Network net(build_cnn_senet(classes, 16, with_se), 0);
        return net.parameter_count();
    });
    m.def("load_network", [](const std::string& path) {
        return network_from_checkpoint(load_checkpoint(path));
    });
    m.def("checkpoint_metadata", [](const std::string& path) {
        return load_checkpoint(path).metadata;
    });

    // training ------------------------------------------------------------
    m.def(
        "pretrain",
        [](const Dataset& ds, int epochs, int batch_size, double lr, std::uint64_t seed,
           std::optional<double> stop_at, const std::string& checkpoint_out) {
            TrainConfig cfg;
            cfg.epochs = epochs;
            cfg.batch_size = batch_size;
            cfg.learning_rate = lr;
            cfg.seed = seed;
            cfg.stop_at_train_accuracy = stop_at;
            auto result = pretrain(ds, cfg);
            if (!checkpoint_out.empty()) save_checkpoint(result.checkpoint, checkpoint_out);
            py::list history;
            for (const auto& r : result.history)
                history.append(py::dict(py::arg("epoch") = r.epoch, py::arg("train_loss") = r.train_loss,
                                        py::arg("train_acc") = r.train_acc, py::arg("val_loss") = r.val_loss,
                                        py::arg("val_acc") = r.val_acc));
            return py::dict(py::arg("selected_epoch") = result.selected_epoch,
                            py::arg("history") = history);
        },
        py::arg("dataset"), py::arg("epochs") = 50, py::arg("batch_size") = 16,
        py::arg("learning_rate") = 0.001, py::arg("seed") = 0,
        py::arg("stop_at_train_accuracy") = std::nullopt, py::arg("checkpoint_out") = "");

    m.def(
        "train_detector",
        [](const Dataset& ds, int iterations, int batch_size, int subdivisions, int input_size,
           int burn_in, double lr, int eval_interval, std::vector<std::pair<double, double>> anchors,
           std::uint64_t seed, std::optional<double> early_stop_map, const std::string& checkpoint_out) {
            DetectorTrainConfig cfg;
            cfg.total_iterations = iterations;
            cfg.batch_size = batch_size;
            cfg.subdivisions = subdivisions;
            cfg.input_size = input_size;
            cfg.burn_in_iterations = burn_in;
            cfg.base_lr = lr;
            cfg.eval_interval = eval_interval;
            for (auto [w, h] : anchors) cfg.anchors.push_back({w, h});
            cfg.seed = seed;
            cfg.early_stop_map = early_stop_map;
            auto result = train_detector(ds, cfg);
            if (!checkpoint_out.empty()) save_checkpoint(result.best, checkpoint_out);
            return py::dict(py::arg("best_map") = result.best_map,
                            py::arg("best_iteration") = result.best_iteration,
                            py::arg("loss") = result.curves.loss, py::arg("iou") = result.curves.iou,
                            py::arg("eval_iterations") = result.curves.eval_iterations,
                            py::arg("map_values") = result.curves.map_values);
        },
        py::arg("dataset"), py::arg("iterations"), py::arg("batch_size") = 8,
        py::arg("subdivisions") = 1, py::arg("input_size") = 96, py::arg("burn_in") = 0,
        py::arg("learning_rate") = 0.001, py::arg("eval_interval") = 50,
        py::arg("anchors") = std::vector<std::pair<double, double>>{{12, 12}, {20, 20}, {32, 32}},
        py::arg("seed") = 0, py::arg("early_stop_map") = std::nullopt,
        py::arg("checkpoint_out") = "");

    // pipeline --------------------------------------------------------------
    py::class_<Pipeline>(m, "Pipeline")
        .def_static(
            "load",
            [](const std::string& det, const std::string& cls, double conf, double nms_thr,
               double margin) {
                return Pipeline::load(det, cls, {conf, nms_thr, margin});
            },
            py::arg("detector"), py::arg("classifier"), py::arg("conf_threshold") = 0.25,
            py::arg("nms_threshold") = 0.45, py::arg("crop_margin") = 0.0)
        .def("class_names", &Pipeline::class_names)
        .def("process", [](Pipeline& p, const std::string& frame_id, const py::array_t<std::uint8_t>& frame) {
            FrameResult r = p.process(frame_id, image_from_array(frame));
            std::vector<std::pair<std::array<double, 4>, double>> dets;
            for (const auto& d : r.detections) dets.emplace_back(tuple_from_box(d.box), d.score());
            return py::dict(py::arg("frame_id") = r.frame_id, py::arg("detections") = dets,
                            py::arg("classifications") = r.classifications,
                            py::arg("species_counts") = r.species_counts);
        });

    // verification ----------------------------------------------------------
    m.def(
        "gradcheck",
        [](std::uint64_t seed, int repeats) {
            py::list out;
            for (const auto& r : standard_gradchecks(seed, repeats))
                out.append(py::dict(py::arg("name") = r.name, py::arg("max_rel_err") = r.max_rel_err,
                                    py::arg("passed") = r.passed));
            return out;
        },
        py::arg("seed") = 0, py::arg("repeats") = 5);
}
