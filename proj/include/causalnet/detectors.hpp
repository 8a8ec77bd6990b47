#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "causalnet/nn.hpp"
#include "causalnet/synth.hpp"

namespace causalnet::det {

// Siamese undirected-causality detector: shared conv/pool/dense branch, dot
// combiner (symmetric by construction), affine head under a sigmoid.
nn::ModelSpec causality_detector_spec(std::size_t input_window = 80,
                                      std::size_t conv_window = 61,
                                      std::size_t feature_dim = 50);

// Siamese lag detector: shared conv + per-position dense branch, flattened,
// subtraction combiner (antisymmetric), bias-free tanh/linear head.
nn::ModelSpec lag_detector_spec(std::size_t input_window = 80, std::size_t conv_window = 61,
                                std::size_t feature_dim = 50);

// Standard initialization with the affine head's scale pinned positive; relu
// feature dot products are nonnegative and a negative scale starts training
// behind a saddle.
nn::ModelWeights init_causality_weights(const nn::ModelSpec& spec, std::uint64_t seed);

struct CurriculumSchedule {
    std::vector<std::size_t> stages = {0, 2, 4, 9};  // mixin values, nondecreasing
    std::size_t epochs_per_stage = 1000;
    std::size_t batch_size = 20000;

    void validate() const;
};

struct ConfusionCounts {
    double threshold = 0.0;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct ValidationReport {
    double accuracy = 0.0;  // at threshold 0.5
    std::vector<std::pair<double, double>> roc;  // (fpr, tpr), ascending fpr
    double auc = 0.0;
    std::vector<ConfusionCounts> confusion;
};

struct CausalityStageReport {
    std::size_t stage = 0;
    std::size_t mixin = 0;
    std::size_t epochs = 0;
    std::size_t batch_size = 0;
    double final_train_loss = 0.0;
    ValidationReport validation;
};

struct LagCalibration {
    double threshold = 0.0;
    std::optional<double> direction_precision;  // absent when nothing clears the threshold
    double coverage = 0.0;
};

struct LagStageReport {
    std::size_t stage = 0;
    std::size_t mixin = 0;
    std::size_t epochs = 0;
    std::size_t batch_size = 0;
    double final_train_loss = 0.0;
    double test_mse = 0.0;
    double mean_abs_error = 0.0;
    LagCalibration at_default_threshold;  // tau = 0.025
};

struct CausalityTrainResult {
    nn::ModelWeights model;
    std::vector<CausalityStageReport> reports;
};

struct LagTrainResult {
    nn::ModelWeights model;
    std::vector<LagStageReport> reports;
};

// Curriculum training: each stage generates a fresh labeled set at its mixin
// value and continues from the previous stage's weights.
CausalityTrainResult train_causality(const CurriculumSchedule& schedule,
                                     const synth::SynthConfig& config_template,
                                     const synth::GenePool& pool, std::uint64_t seed,
                                     int workers = 1);

LagTrainResult train_lag(const CurriculumSchedule& schedule,
                         const synth::SynthConfig& config_template,
                         const synth::GenePool& pool, std::uint64_t seed, int workers = 1);

double predict_causality(const nn::ModelWeights& model, const std::vector<double>& a,
                         const std::vector<double>& b);

double predict_lag(const nn::ModelWeights& model, const std::vector<double>& a,
                   const std::vector<double>& b);

// Batched scoring; order matches the input order.
std::vector<double> predict_causality_batch(
    const nn::ModelWeights& model, const std::vector<const std::vector<double>*>& a,
    const std::vector<const std::vector<double>*>& b);
std::vector<double> predict_lag_batch(const nn::ModelWeights& model,
                                      const std::vector<const std::vector<double>*>& a,
                                      const std::vector<const std::vector<double>*>& b);

ValidationReport roc_auc(const nn::ModelWeights& model, const synth::LabeledPairSet& test_set,
                         std::vector<double> thresholds = {});

// Threshold sweep over precomputed scores; roc_auc delegates here.
ValidationReport roc_from_scores(const std::vector<double>& scores,
                                 const std::vector<double>& labels,
                                 std::vector<double> thresholds = {});

std::vector<LagCalibration> calibrate_lag_threshold(const nn::ModelWeights& model,
                                                    const synth::LagPairSet& test_set,
                                                    const std::vector<double>& thresholds);

std::string causality_reports_to_json(const std::vector<CausalityStageReport>& reports);
std::string lag_reports_to_json(const std::vector<LagStageReport>& reports);
std::string calibration_to_json(const std::vector<LagCalibration>& calib);
std::vector<LagCalibration> calibration_from_json(const std::string& text);

}  // namespace causalnet::det
