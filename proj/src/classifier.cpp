#include "finnet/classifier.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace finnet {

void TrainConfig::validate() const {
    FN_CHECK(epochs > 0 && batch_size > 0 && learning_rate > 0,
             "classifier training config values must be positive");
}

namespace {

struct Prepared {
    std::vector<Image> images;  // resized to network input
    std::vector<int> labels;
    std::vector<const LabeledImage*> source;
};

Prepared prepare(const std::vector<const LabeledImage*>& set, int size) {
    Prepared p;
    for (const auto* im : set) {
        p.images.push_back(resize_bilinear(im->pixels, size, size));
        p.labels.push_back(im->label);
        p.source.push_back(im);
    }
    return p;
}

Tensor one_hot(const std::vector<int>& labels, size_t begin, size_t end, int classes) {
    int n = static_cast<int>(end - begin);
    std::vector<float> v(static_cast<size_t>(n) * classes, 0.0f);
    for (int i = 0; i < n; ++i)
        v[static_cast<size_t>(i) * classes + labels[begin + static_cast<size_t>(i)]] = 1.0f;
    return Tensor::from({n, classes}, std::move(v));
}

Tensor batch_tensor(const Prepared& p, const std::vector<size_t>& order, size_t begin, size_t end) {
    std::vector<const Image*> imgs;
    for (size_t k = begin; k < end; ++k) imgs.push_back(&p.images[order[k]]);
    return images_to_batch(imgs);
}

struct EvalPass {
    double loss = 0, accuracy = 0;
};

EvalPass infer_pass(Network& net, const Prepared& p, int classes, int batch) {
    EvalPass out;
    std::int64_t correct = 0;
    double loss_sum = 0;
    size_t n = p.images.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    size_t batches = 0;
    for (size_t b = 0; b < n; b += static_cast<size_t>(batch)) {
        size_t e = std::min(n, b + static_cast<size_t>(batch));
        Tensor x = batch_tensor(p, order, b, e);
        Tensor pred = net.forward(x, false);
        std::vector<int> lab(p.labels.begin() + static_cast<std::ptrdiff_t>(b),
                             p.labels.begin() + static_cast<std::ptrdiff_t>(e));
        Tensor target = one_hot(p.labels, b, e, classes);
        loss_sum += static_cast<double>(categorical_cross_entropy(pred, target).item());
        ++batches;
        for (size_t i = 0; i < e - b; ++i) {
            const float* row = pred.data() + i * static_cast<size_t>(classes);
            int arg = static_cast<int>(std::max_element(row, row + classes) - row);
            if (arg == lab[i]) ++correct;
        }
    }
    out.loss = batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;
    out.accuracy = n > 0 ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
    return out;
}

void append_metrics_csv(const std::string& path, const EpochRecord& r) {
    bool fresh = !std::filesystem::exists(path);
    std::ofstream os(path, std::ios::app);
    if (!os) throw Error("cannot open metrics file for append: " + path);
    if (fresh) os << "epoch,train_loss,train_acc,val_loss,val_acc,wall_seconds\n";
    os << r.epoch << ',' << r.train_loss << ',' << r.train_acc << ',' << r.val_loss << ','
       << r.val_acc << ',' << r.wall_seconds << '\n';
}

ClassifierTrainResult train_loop(Network& net, const Dataset& dataset, const TrainConfig& config,
                                 std::map<std::string, std::string> meta) {
    int classes = static_cast<int>(dataset.class_names.size());
    auto train_set = dataset.subset(Provenance::Train);
    auto val_set = dataset.subset(Provenance::Val);
    if (train_set.empty())
        for (const auto& im : dataset.images) train_set.push_back(&im);
    bool val_is_train = val_set.empty();
    if (val_is_train) {
        std::cerr << "warning: no validation split; validation metrics use the training set\n";
        val_set = train_set;
    }

    int size = net.spec().in_height;
    Prepared train = prepare(train_set, size);
    Prepared val = val_is_train ? train : prepare(val_set, size);

    auto params = net.trainable_params();
    Adam<float> adam(params, {.learning_rate = static_cast<float>(config.learning_rate)});
    std::mt19937_64 rng(config.seed);

    std::vector<size_t> order(train.images.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    ClassifierTrainResult result;
    std::vector<std::vector<float>> best_snapshot;
    double best_val = -1;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0;
        size_t batches = 0;
        for (size_t b = 0; b < order.size(); b += static_cast<size_t>(config.batch_size)) {
            size_t e = std::min(order.size(), b + static_cast<size_t>(config.batch_size));
            Tensor x = batch_tensor(train, order, b, e);
            Tensor pred = net.forward(x, true, &rng);
            std::vector<int> lab;
            for (size_t k = b; k < e; ++k) lab.push_back(train.labels[order[k]]);
            Tensor target = one_hot(lab, 0, lab.size(), classes);
            Tensor loss = categorical_cross_entropy(pred, target);
            adam.zero_grad();
            backward(loss);
            adam.step();
            loss_sum += static_cast<double>(loss.item());
            ++batches;
        }
        EvalPass train_eval = infer_pass(net, train, classes, config.batch_size);
        EvalPass val_eval = val_is_train ? train_eval : infer_pass(net, val, classes, config.batch_size);
        auto t1 = std::chrono::steady_clock::now();
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;
        rec.train_acc = train_eval.accuracy;
        rec.val_loss = val_eval.loss;
        rec.val_acc = val_eval.accuracy;
        rec.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
        result.history.push_back(rec);
        if (!config.metrics_csv.empty()) append_metrics_csv(config.metrics_csv, rec);

        if (config.selection == CheckpointSelection::BestValidation && rec.val_acc > best_val) {
            best_val = rec.val_acc;
            result.selected_epoch = epoch;
            best_snapshot.clear();
            for (auto& buf : net.buffers()) best_snapshot.push_back(*buf.data);
        }
        if (config.stop_at_train_accuracy && rec.train_acc >= *config.stop_at_train_accuracy) break;
    }

    if (config.selection == CheckpointSelection::BestValidation && !best_snapshot.empty()) {
        auto bufs = net.buffers();
        for (size_t i = 0; i < bufs.size(); ++i) *bufs[i].data = best_snapshot[i];
        net.sync_batchnorm_flags();
    } else {
        result.selected_epoch = result.history.empty() ? -1 : result.history.back().epoch;
    }

    meta["kind"] = "classifier";
    meta["seed"] = std::to_string(config.seed);
    meta["selected_epoch"] = std::to_string(result.selected_epoch);
    if (!result.history.empty()) {
        meta["final_train_acc"] = std::to_string(result.history.back().train_acc);
        meta["final_val_acc"] = std::to_string(result.history.back().val_acc);
    }
    std::string names;
    for (const auto& n : dataset.class_names) names += names.empty() ? n : "," + n;
    meta["class_names"] = names;
    result.checkpoint = checkpoint_from(net, std::move(meta));
    return result;
}

}  // namespace

ClassifierTrainResult pretrain(const Dataset& dataset, const TrainConfig& config) {
    config.validate();
    FN_CHECK(dataset.kind == DatasetKind::Classification, "pretrain needs a classification dataset");
    FN_CHECK(dataset.class_names.size() >= 2, "pretrain needs at least 2 classes");
    FN_CHECK(config.selection == CheckpointSelection::BestValidation,
             "pre-training selects the best-validation epoch");
    NetworkSpec spec = build_cnn_senet(static_cast<int>(dataset.class_names.size()),
                                      config.se_ratio, config.with_se);
    Network net(spec, config.seed);
    return train_loop(net, dataset, config, {{"phase", "pretrain"}});
}

ClassifierTrainResult posttrain(const Checkpoint& pretrained, const Dataset& dataset,
                                const TrainConfig& config) {
    config.validate();
    FN_CHECK(dataset.kind == DatasetKind::Classification, "posttrain needs a classification dataset");
    FN_CHECK(dataset.class_names.size() >= 2, "posttrain needs at least 2 classes");
    auto net = replace_head(pretrained, static_cast<int>(dataset.class_names.size()), config.seed);
    return train_loop(*net, dataset, config, {{"phase", "posttrain"}});
}

EvaluationReport evaluate_classifier(Network& net, const std::vector<const LabeledImage*>& test) {
    FN_CHECK(!test.empty(), "cannot evaluate on an empty test split");
    int classes = net.spec().class_count;
    EvaluationReport rep;
    rep.confusion.assign(static_cast<size_t>(classes), std::vector<std::int64_t>(classes, 0));
    std::int64_t correct = 0;
    for (const auto* im : test) {
        FN_CHECK(im->label >= 0 && im->label < classes,
                 "test sample label out of range for the network head");
        auto [arg, probs] = classify(net, im->pixels);
        rep.confusion[static_cast<size_t>(im->label)][static_cast<size_t>(arg)]++;
        if (arg == im->label) ++correct;
        rep.predictions.push_back(
            {im->id, im->label, arg, static_cast<double>(probs[static_cast<size_t>(arg)])});
    }
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
    return rep;
}

std::pair<int, std::vector<float>> classify(Network& net, const Image& img) {
    int size = net.spec().in_height;
    Image resized = resize_bilinear(img, size, size);
    Tensor pred = net.forward(image_to_tensor(resized), false);
    std::vector<float> probs(pred.values());
    int arg = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    return {arg, probs};
}

RepeatedResult run_repeated(const std::function<double(std::uint64_t)>& experiment, int n_runs,
                            std::uint64_t base_seed) {
    FN_CHECK(n_runs >= 1, "run_repeated needs at least one run");
    RepeatedResult out;
    for (int i = 0; i < n_runs; ++i)
        out.per_run.push_back(experiment(base_seed + static_cast<std::uint64_t>(i)));
    double acc = 0;
    for (double v : out.per_run) acc += v;
    out.mean_accuracy = acc / static_cast<double>(out.per_run.size());
    return out;
}

}  // namespace finnet
