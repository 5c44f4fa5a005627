#ifndef FINNET_CLASSIFIER_HPP
#define FINNET_CLASSIFIER_HPP

#include <functional>
#include <optional>

#include "finnet/checkpoint.hpp"
#include "finnet/dataset.hpp"
#include "finnet/network.hpp"

namespace finnet {

enum class CheckpointSelection { BestValidation, FinalEpoch };

struct TrainConfig {
    int epochs = 50;
    int batch_size = 16;
    double learning_rate = 0.001;
    std::uint64_t seed = 0;
    CheckpointSelection selection = CheckpointSelection::BestValidation;
    bool with_se = true;
    int se_ratio = 16;
    bool class_weighting = false;  // hook; the reference protocol applies none
    std::optional<double> stop_at_train_accuracy;
    std::string metrics_csv;  // per-epoch rows appended when non-empty

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0, train_acc = 0, val_loss = 0, val_acc = 0, wall_seconds = 0;
};

struct ClassifierTrainResult {
    Checkpoint checkpoint;
    std::vector<EpochRecord> history;
    int selected_epoch = -1;
};

/// Fresh CNN-SENet trained from scratch; returns the best-validation epoch.
ClassifierTrainResult pretrain(const Dataset& dataset, const TrainConfig& config);

/// Head surgery to the dataset's class count, then fine-tuning; returns
/// final-epoch weights by default.
ClassifierTrainResult posttrain(const Checkpoint& pretrained, const Dataset& dataset,
                                const TrainConfig& config);

struct EvaluationReport {
    double accuracy = 0;
    std::vector<std::vector<std::int64_t>> confusion;  // [true][predicted]
    struct Prediction {
        std::string id;
        int true_class = -1, predicted = -1;
        double probability = 0;
    };
    std::vector<Prediction> predictions;
};

EvaluationReport evaluate_classifier(Network& net, const std::vector<const LabeledImage*>& test);

/// Argmax class and the full probability row for one image.
std::pair<int, std::vector<float>> classify(Network& net, const Image& img);

struct RepeatedResult {
    double mean_accuracy = 0;
    std::vector<double> per_run;
};

/// Runs `experiment(seed)` with seeds seed .. seed+n-1.
RepeatedResult run_repeated(const std::function<double(std::uint64_t)>& experiment, int n_runs,
                            std::uint64_t base_seed);

}  // namespace finnet

#endif
