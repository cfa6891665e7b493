#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dti/dataset.hpp"
#include "dti/model.hpp"

namespace dti {

struct TrainConfig {
    double learning_rate = 0.001;
    int batch_size = 256;
    int epochs = 350;
    double momentum = 0.9;
    std::uint64_t seed = 1;
    bool shuffle_each_epoch = true;

    void validate() const;
};

// Stratified k-fold plan: per-class counts across folds differ by at most 1,
// folds partition the sample set.
struct FoldPlan {
    int k = 0;
    std::vector<int> assignments; // per-sample fold index in [0,k)
    std::uint64_t seed = 0;
};

struct EvalReport {
    std::vector<std::string> labels;                 // row/column order
    std::vector<std::vector<std::int64_t>> confusion; // rows = true class
    std::vector<std::int64_t> support;               // row sums
    std::vector<double> per_class_accuracy;          // diag/row_sum, 0 when unsupported
    double mean_class_accuracy = 0.0;                // over classes with support
    double overall_accuracy = 0.0;
    std::vector<double> fold_accuracies;             // per-fold overall accuracy
    double fold_mean = 0.0;
    double fold_sd = 0.0; // population SD
    std::vector<std::string> unseen_conditions;      // filled by cross_condition_eval
};

struct GatedPrediction {
    bool has_class = false;
    int class_index = -1; // valid iff has_class
    float score = 0.0f;   // top softmax probability
    float threshold = 0.0f;
};

struct TrainResult {
    Model model;
    std::vector<double> loss_curve; // per-epoch mean loss
};

FoldPlan make_folds(const std::vector<int>& labels, int k, std::uint64_t seed);

// Minibatch SGD with momentum: v <- mu*v - lr*g; w <- w + v. Shuffles each
// epoch from a seeded stream; deterministic per (seed, config, data).
TrainResult train(Model model, const LabeledDataset& data, const TrainConfig& config);

// Eval-mode argmax evaluation (ties resolve to the lowest class index).
// When the model carries class labels the dataset vocabulary is mapped onto
// them by name, so a subset-vocabulary dataset evaluates correctly.
EvalReport evaluate(const Model& model, const LabeledDataset& data);

// Trains k fresh models on the stratified folds (derived seeds), evaluates
// each on its held-out fold, pools one confusion matrix and keeps per-fold
// accuracies. jobs > 1 trains folds concurrently; results are independent of
// execution order.
EvalReport cross_validate(const NetworkSpec& spec, const LabeledDataset& data, int k,
                          const TrainConfig& config, int jobs = 1);

// Threshold-gated prediction: emits the top class only when its probability
// strictly exceeds the threshold. Images with a different side length are
// resized to the network input first.
GatedPrediction predict_gated(const Model& model, const QuantizedImage& image, float threshold);

// evaluate() on a held-out-condition dataset; flags condition tags that never
// occurred in the model's training metadata.
EvalReport cross_condition_eval(const Model& model, const LabeledDataset& held_out);

// Confusion matrix and accuracy metrics from raw (truth, prediction) pairs;
// the tallying backbone of evaluate().
EvalReport tally_predictions(const std::vector<int>& truths, const std::vector<int>& predictions,
                             const std::vector<std::string>& labels);

// Network input row for one image: resized to `side` and scaled to [0,1].
std::vector<float> to_network_input(const QuantizedImage& image, int side);

std::string report_to_json(const EvalReport& report);
std::string confusion_to_csv(const EvalReport& report);

} // namespace dti
