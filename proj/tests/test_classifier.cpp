#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "finnet/classifier.hpp"

using namespace finnet;
namespace fs = std::filesystem;

namespace {

Dataset tiny_dataset(int classes, int per_class, std::uint64_t seed) {
    Dataset ds = generate_synthetic_classification(classes, per_class, 48, seed);
    split_dataset(ds, 0.5, 0.25, 0.25, seed);
    return ds;
}

TrainConfig quick_config() {
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 8;
    cfg.seed = 1;
    return cfg;
}

// constant-prediction network: zeroed head weights, bias favoring `winner`
Network constant_classifier(int classes, int winner) {
    Network net(build_cnn_senet(classes), 0);
    // one train pass (batch 2 for the dense batch norm) initializes the
    // running statistics
    std::mt19937_64 rng(0);
    net.forward(Tensor::filled({2, 3, 200, 200}, 0.3f), true, &rng);
    auto bufs = net.buffers();
    NamedBuffer *head_w = nullptr, *head_b = nullptr;
    for (auto& b : bufs) {
        if (b.name.find("dense.weight") != std::string::npos) head_w = &b;
        if (b.name.find("dense.bias") != std::string::npos) head_b = &b;
    }
    std::fill(head_w->data->begin(), head_w->data->end(), 0.0f);
    std::fill(head_b->data->begin(), head_b->data->end(), 0.0f);
    (*head_b->data)[static_cast<size_t>(winner)] = 10.0f;
    return net;
}

}  // namespace

TEST_CASE("pretrain produces a checkpoint with the dataset's head and metadata") {
    Dataset ds = tiny_dataset(3, 4, 7);
    auto result = pretrain(ds, quick_config());
    REQUIRE(result.history.size() == 1);
    CHECK(result.selected_epoch == 1);
    const auto* head = result.checkpoint.find("L32.dense.weight");
    REQUIRE(head != nullptr);
    CHECK(head->shape == Shape{256, 3});
    CHECK(result.checkpoint.metadata.at("phase") == "pretrain");
    CHECK(result.checkpoint.metadata.at("kind") == "classifier");
    CHECK(result.checkpoint.metadata.at("class_names") == "species_00,species_01,species_02");
}

TEST_CASE("pretrain insists on best-validation checkpoint selection") {
    Dataset ds = tiny_dataset(2, 3, 1);
    TrainConfig cfg = quick_config();
    cfg.selection = CheckpointSelection::FinalEpoch;
    CHECK_THROWS_WITH_AS(pretrain(ds, cfg), doctest::Contains("best-validation"), Error);
}

TEST_CASE("best-validation selection picks the first argmax of val accuracy") {
    Dataset ds = tiny_dataset(2, 6, 3);
    TrainConfig cfg = quick_config();
    cfg.epochs = 3;
    auto result = pretrain(ds, cfg);
    REQUIRE(result.history.size() <= 3);
    double best = -1;
    int first_best = -1;
    for (const auto& r : result.history)
        if (r.val_acc > best) {
            best = r.val_acc;
            first_best = r.epoch;
        }
    CHECK(result.selected_epoch == first_best);
}

TEST_CASE("training is bitwise reproducible in the seed") {
    Dataset ds = tiny_dataset(2, 3, 9);
    TrainConfig cfg = quick_config();
    auto a = pretrain(ds, cfg);
    auto b = pretrain(ds, cfg);
    CHECK(a.checkpoint.payload_checksum() == b.checkpoint.payload_checksum());
    CHECK(a.history[0].train_loss == b.history[0].train_loss);
    CHECK(a.history[0].val_acc == b.history[0].val_acc);
    cfg.seed = 2;
    auto c = pretrain(ds, cfg);
    CHECK(a.checkpoint.payload_checksum() != c.checkpoint.payload_checksum());
}

TEST_CASE("early stop on train accuracy truncates the history") {
    Dataset ds = tiny_dataset(2, 3, 4);
    TrainConfig cfg = quick_config();
    cfg.epochs = 5;
    cfg.stop_at_train_accuracy = 0.0;  // met immediately
    auto result = pretrain(ds, cfg);
    CHECK(result.history.size() == 1);
}

TEST_CASE("posttrain performs head surgery to the new class count") {
    Dataset pre_ds = tiny_dataset(3, 4, 11);
    auto pre = pretrain(pre_ds, quick_config());

    Dataset post_ds = tiny_dataset(4, 3, 12);
    TrainConfig cfg = quick_config();
    cfg.selection = CheckpointSelection::FinalEpoch;
    auto post = posttrain(pre.checkpoint, post_ds, cfg);
    const auto* head = post.checkpoint.find("L32.dense.weight");
    REQUIRE(head != nullptr);
    CHECK(head->shape == Shape{256, 4});
    CHECK(post.checkpoint.metadata.at("phase") == "posttrain");
    CHECK(post.selected_epoch == 1);  // final epoch of a one-epoch run
}

TEST_CASE("metrics csv carries the per-epoch header and one row per epoch") {
    fs::path tmp = fs::temp_directory_path() /
                   ("finnet-csv-" + std::to_string(std::random_device{}()) + ".csv");
    Dataset ds = tiny_dataset(2, 3, 5);
    TrainConfig cfg = quick_config();
    cfg.epochs = 2;
    cfg.metrics_csv = tmp.string();
    pretrain(ds, cfg);
    std::ifstream is(tmp);
    REQUIRE(is.good());
    std::string line;
    std::getline(is, line);
    CHECK(line == "epoch,train_loss,train_acc,val_loss,val_acc,wall_seconds");
    int rows = 0;
    while (std::getline(is, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);
    fs::remove(tmp);
}

TEST_CASE("evaluate_classifier: perfect and constant predictors") {
    Dataset ds = generate_synthetic_classification(3, 3, 48, 21);
    auto all = ds.subset(Provenance::Unsplit);

    Network constant = constant_classifier(3, 1);
    auto rep = evaluate_classifier(constant, all);
    // every prediction lands in column 1 of the confusion matrix
    for (int t = 0; t < 3; ++t) {
        CHECK(rep.confusion[static_cast<size_t>(t)][1] == 3);
        CHECK(rep.confusion[static_cast<size_t>(t)][0] == 0);
        CHECK(rep.confusion[static_cast<size_t>(t)][2] == 0);
    }
    CHECK(rep.accuracy == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    REQUIRE(rep.predictions.size() == 9);
    for (const auto& p : rep.predictions) {
        CHECK(p.predicted == 1);
        CHECK(p.probability > 0.99);  // bias +10 saturates the softmax
    }

    // a "perfect" run: evaluate only the samples whose label matches
    std::vector<const LabeledImage*> only_ones;
    for (const auto* im : all)
        if (im->label == 1) only_ones.push_back(im);
    auto perfect = evaluate_classifier(constant, only_ones);
    CHECK(perfect.accuracy == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(evaluate_classifier(constant, {}), Error);
}

TEST_CASE("classify returns the argmax and a probability row") {
    Network net = constant_classifier(4, 2);
    Image img = Image::blank(30, 30, 120);
    auto [arg, probs] = classify(net, img);
    CHECK(arg == 2);
    REQUIRE(probs.size() == 4);
    float sum = 0;
    for (float p : probs) {
        CHECK(p >= 0.0f);
        sum += p;
    }
    CHECK(sum == doctest::Approx(1.0f).epsilon(1e-5));
}

TEST_CASE("run_repeated feeds consecutive seeds and averages") {
    std::vector<std::uint64_t> seen;
    auto result = run_repeated(
        [&](std::uint64_t seed) {
            seen.push_back(seed);
            return static_cast<double>(seed);
        },
        3, 40);
    CHECK(seen == std::vector<std::uint64_t>{40, 41, 42});
    CHECK(result.per_run.size() == 3);
    CHECK(result.mean_accuracy == doctest::Approx(41.0).epsilon(1e-12));

    auto one = run_repeated([](std::uint64_t) { return 0.625; }, 1, 0);
    CHECK(one.mean_accuracy == doctest::Approx(0.625).epsilon(1e-12));
    CHECK_THROWS_AS(run_repeated([](std::uint64_t) { return 0.0; }, 0, 0), Error);
}

TEST_CASE("training config validation") {
    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = {};
    cfg.learning_rate = -1;
    CHECK_THROWS_AS(cfg.validate(), Error);
    Dataset det = generate_synthetic_detection(1, 64, 1, 0);
    CHECK_THROWS_AS(pretrain(det, quick_config()), Error);
}
