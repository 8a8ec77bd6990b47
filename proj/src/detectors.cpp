#include "causalnet/detectors.hpp"

#include <algorithm>
#include <cmath>

#include "causalnet/errors.hpp"
#include "json.hpp"

namespace causalnet::det {

namespace {

using nn::Tensor;

Tensor stack_rows(const std::vector<const std::vector<double>*>& rows) {
    const std::size_t n = rows.size();
    const std::size_t w = rows.empty() ? 0 : rows[0]->size();
    Tensor t({n, w});
    for (std::size_t i = 0; i < n; ++i) {
        if (rows[i]->size() != w) throw UsageError("batch rows have differing lengths");
        std::copy(rows[i]->begin(), rows[i]->end(), t.values.begin() + static_cast<std::ptrdiff_t>(i * w));
    }
    return t;
}

std::vector<double> predict_batch(const nn::ModelWeights& model,
                                  const std::vector<const std::vector<double>*>& a,
                                  const std::vector<const std::vector<double>*>& b) {
    if (a.size() != b.size()) throw UsageError("predict batch: side lengths differ");
    std::vector<double> out(a.size());
    constexpr std::size_t kChunk = 2048;
    for (std::size_t lo = 0; lo < a.size(); lo += kChunk) {
        const std::size_t hi = std::min(a.size(), lo + kChunk);
        std::vector<const std::vector<double>*> ca(a.begin() + static_cast<std::ptrdiff_t>(lo),
                                                   a.begin() + static_cast<std::ptrdiff_t>(hi));
        std::vector<const std::vector<double>*> cb(b.begin() + static_cast<std::ptrdiff_t>(lo),
                                                   b.begin() + static_cast<std::ptrdiff_t>(hi));
        auto fr = nn::forward(model, {stack_rows(ca), stack_rows(cb)}, false, 0);
        for (std::size_t i = lo; i < hi; ++i) out[i] = fr.output.values[i - lo];
    }
    return out;
}

// One optimization pass over a stage's training pairs.
template <typename PairT, typename GetA, typename GetB, typename GetLabel>
double run_training_stage(nn::ModelWeights& model, const std::vector<PairT>& train,
                          std::size_t epochs, std::size_t batch_size, nn::LossKind loss_kind,
                          std::uint64_t stage_seed, std::size_t stage_index, GetA get_a,
                          GetB get_b, GetLabel get_label) {
    nn::AdamState adam = nn::AdamState::init(model);
    std::vector<std::size_t> order(train.size());
    double last_loss = 0.0;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(derive_seed(stage_seed, 1, epoch));
        shuffle_rng.shuffle(order);
        for (std::size_t lo = 0, batch_idx = 0; lo < order.size(); lo += batch_size, ++batch_idx) {
            const std::size_t hi = std::min(order.size(), lo + batch_size);
            std::vector<const std::vector<double>*> a, b;
            std::vector<double> labels;
            a.reserve(hi - lo);
            b.reserve(hi - lo);
            labels.reserve(hi - lo);
            for (std::size_t k = lo; k < hi; ++k) {
                const PairT& p = train[order[k]];
                a.push_back(&get_a(p));
                b.push_back(&get_b(p));
                labels.push_back(get_label(p));
            }
            auto fr = nn::forward(model, {stack_rows(a), stack_rows(b)}, true,
                                  derive_seed(stage_seed, 2, epoch, batch_idx));
            const auto lr = nn::loss(loss_kind, fr.output, labels);
            last_loss = lr.value;
            if (!std::isfinite(lr.value))
                throw TrainingError("training diverged (non-finite loss) at stage " +
                                        std::to_string(stage_index),
                                    static_cast<int>(stage_index));
            const auto grads = nn::backward(model, *fr.cache, lr.grad);
            nn::adam_step(adam, model, grads);
        }
    }
    return last_loss;
}

}  // namespace

nn::ModelSpec causality_detector_spec(std::size_t input_window, std::size_t conv_window,
                                      std::size_t feature_dim) {
    if (conv_window >= input_window)
        throw UsageError("causality_detector_spec: conv window must be smaller than the input");
    nn::ModelSpec spec;
    spec.layers = {
        nn::LayerSpec::Conv1d(conv_window, 1, feature_dim, true),
        nn::LayerSpec::Act(nn::Activation::relu),
        nn::LayerSpec::AvgPoolTime(),
        nn::LayerSpec::Dense(feature_dim, feature_dim, true),
        nn::LayerSpec::Act(nn::Activation::relu),
        // head
        nn::LayerSpec::Dense(1, 1, true),
        nn::LayerSpec::Act(nn::Activation::sigmoid),
    };
    spec.combiner = nn::Combiner::dot;
    spec.branch_depth = 5;
    return spec;
}

nn::ModelSpec lag_detector_spec(std::size_t input_window, std::size_t conv_window,
                                std::size_t feature_dim) {
    if (conv_window >= input_window)
        throw UsageError("lag_detector_spec: conv window must be smaller than the input");
    const std::size_t positions = input_window - conv_window + 1;
    const std::size_t flat = positions * feature_dim;
    nn::ModelSpec spec;
    spec.layers = {
        nn::LayerSpec::Conv1d(conv_window, 1, feature_dim, true),
        nn::LayerSpec::Act(nn::Activation::relu),
        nn::LayerSpec::Dense(feature_dim, feature_dim, true),  // shared across positions
        nn::LayerSpec::Act(nn::Activation::relu),
        nn::LayerSpec::Flatten(),
        // head: everything past the subtraction is bias-free and odd
        nn::LayerSpec::Dense(flat, feature_dim, false),
        nn::LayerSpec::Act(nn::Activation::tanh),
        nn::LayerSpec::Dense(feature_dim, 1, false),
    };
    spec.combiner = nn::Combiner::subtract;
    spec.branch_depth = 5;
    return spec;
}

nn::ModelWeights init_causality_weights(const nn::ModelSpec& spec, std::uint64_t seed) {
    nn::ModelWeights mw = nn::ModelWeights::init(spec, seed);
    // The dot product of relu feature vectors is nonnegative, so a negative
    // initial head scale puts training on the far side of a saddle at zero
    // where no gradient reaches the shared branch. A fixed positive scale
    // keeps desk-scale training budgets clear of it.
    auto& head_scale = mw.params[mw.params.size() - 2].tensor;
    auto& head_bias = mw.params[mw.params.size() - 1].tensor;
    head_scale.values[0] = 4.0;
    head_bias.values[0] = 0.0;
    return mw;
}

void CurriculumSchedule::validate() const {
    if (stages.empty()) throw UsageError("CurriculumSchedule: stages must be nonempty");
    for (std::size_t i = 1; i < stages.size(); ++i)
        if (stages[i] < stages[i - 1])
            throw UsageError("CurriculumSchedule: stages must be nondecreasing");
    if (epochs_per_stage == 0 || batch_size == 0)
        throw UsageError("CurriculumSchedule: epochs and batch size must be positive");
}

CausalityTrainResult train_causality(const CurriculumSchedule& schedule,
                                     const synth::SynthConfig& config_template,
                                     const synth::GenePool& pool, std::uint64_t seed,
                                     int workers) {
    schedule.validate();
    CausalityTrainResult result;
    result.model =
        init_causality_weights(causality_detector_spec(config_template.window), derive_seed(seed, 21));
    for (std::size_t s = 0; s < schedule.stages.size(); ++s) {
        synth::SynthConfig cfg = config_template;
        cfg.mixin = schedule.stages[s];
        cfg.seed = derive_seed(seed, 20, s);
        const auto split = synth::build_labeled_set(cfg, pool, workers);
        CausalityStageReport report;
        report.stage = s;
        report.mixin = cfg.mixin;
        report.epochs = schedule.epochs_per_stage;
        report.batch_size = schedule.batch_size;
        report.final_train_loss = run_training_stage(
            result.model, split.train.pairs, schedule.epochs_per_stage, schedule.batch_size,
            nn::LossKind::bce, derive_seed(seed, 22, s), s,
            [](const synth::SyntheticPair& p) -> const std::vector<double>& { return p.cause; },
            [](const synth::SyntheticPair& p) -> const std::vector<double>& { return p.effect; },
            [](const synth::SyntheticPair& p) { return p.label; });
        report.validation = roc_auc(result.model, split.test);
        result.reports.push_back(std::move(report));
    }
    return result;
}

LagTrainResult train_lag(const CurriculumSchedule& schedule,
                         const synth::SynthConfig& config_template, const synth::GenePool& pool,
                         std::uint64_t seed, int workers) {
    schedule.validate();
    LagTrainResult result;
    result.model =
        nn::ModelWeights::init(lag_detector_spec(config_template.window), derive_seed(seed, 31));
    for (std::size_t s = 0; s < schedule.stages.size(); ++s) {
        synth::SynthConfig cfg = config_template;
        cfg.mixin = schedule.stages[s];
        cfg.seed = derive_seed(seed, 30, s);
        const auto split = synth::build_lag_set(cfg, pool, workers);
        LagStageReport report;
        report.stage = s;
        report.mixin = cfg.mixin;
        report.epochs = schedule.epochs_per_stage;
        report.batch_size = schedule.batch_size;
        report.final_train_loss = run_training_stage(
            result.model, split.train.pairs, schedule.epochs_per_stage, schedule.batch_size,
            nn::LossKind::mse, derive_seed(seed, 32, s), s,
            [](const synth::LagPair& p) -> const std::vector<double>& { return p.first; },
            [](const synth::LagPair& p) -> const std::vector<double>& { return p.second; },
            [](const synth::LagPair& p) { return p.lag_label; });
        // Held-out metrics plus the paper's operating point.
        std::vector<const std::vector<double>*> a, b;
        for (const auto& p : split.test.pairs) {
            a.push_back(&p.first);
            b.push_back(&p.second);
        }
        const auto scores = predict_batch(result.model, a, b);
        double mse = 0.0, mae = 0.0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            const double d = scores[i] - split.test.pairs[i].lag_label;
            mse += d * d;
            mae += std::abs(d);
        }
        if (!scores.empty()) {
            mse /= static_cast<double>(scores.size());
            mae /= static_cast<double>(scores.size());
        }
        report.test_mse = mse;
        report.mean_abs_error = mae;
        const auto calib = calibrate_lag_threshold(result.model, split.test, {0.025});
        if (!calib.empty()) report.at_default_threshold = calib.front();
        result.reports.push_back(std::move(report));
    }
    return result;
}

double predict_causality(const nn::ModelWeights& model, const std::vector<double>& a,
                         const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty())
        throw UsageError("predict_causality: inputs must be nonempty and of equal length");
    return predict_batch(model, {&a}, {&b})[0];
}

double predict_lag(const nn::ModelWeights& model, const std::vector<double>& a,
                   const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty())
        throw UsageError("predict_lag: inputs must be nonempty and of equal length");
    return predict_batch(model, {&a}, {&b})[0];
}

std::vector<double> predict_causality_batch(
    const nn::ModelWeights& model, const std::vector<const std::vector<double>*>& a,
    const std::vector<const std::vector<double>*>& b) {
    return predict_batch(model, a, b);
}

std::vector<double> predict_lag_batch(const nn::ModelWeights& model,
                                      const std::vector<const std::vector<double>*>& a,
                                      const std::vector<const std::vector<double>*>& b) {
    return predict_batch(model, a, b);
}

ValidationReport roc_auc(const nn::ModelWeights& model, const synth::LabeledPairSet& test_set,
                         std::vector<double> thresholds) {
    if (test_set.pairs.empty()) throw UsageError("roc_auc: empty test set");
    std::vector<const std::vector<double>*> a, b;
    std::vector<double> labels;
    for (const auto& p : test_set.pairs) {
        a.push_back(&p.cause);
        b.push_back(&p.effect);
        labels.push_back(p.label);
    }
    return roc_from_scores(predict_batch(model, a, b), labels, std::move(thresholds));
}

ValidationReport roc_from_scores(const std::vector<double>& scores,
                                 const std::vector<double>& labels,
                                 std::vector<double> thresholds) {
    if (scores.empty() || scores.size() != labels.size())
        throw UsageError("roc_from_scores: empty or mismatched scores/labels");
    if (thresholds.empty()) {
        thresholds.resize(101);
        for (std::size_t i = 0; i < 101; ++i) thresholds[i] = static_cast<double>(i) / 100.0;
    }
    ValidationReport report;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] >= 0.5;
        const bool actual = labels[i] >= 0.5;
        if (predicted == actual) ++correct;
    }
    report.accuracy = static_cast<double>(correct) / static_cast<double>(scores.size());

    for (double tau : thresholds) {
        ConfusionCounts c;
        c.threshold = tau;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            const bool predicted = scores[i] >= tau;
            const bool actual = labels[i] >= 0.5;
            if (predicted && actual) ++c.tp;
            else if (predicted && !actual) ++c.fp;
            else if (!predicted && !actual) ++c.tn;
            else ++c.fn;
        }
        report.confusion.push_back(c);
    }
    for (const auto& c : report.confusion) {
        const double fpr = c.fp + c.tn > 0
                               ? static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn)
                               : 0.0;
        const double tpr = c.tp + c.fn > 0
                               ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn)
                               : 0.0;
        report.roc.emplace_back(fpr, tpr);
    }
    std::sort(report.roc.begin(), report.roc.end());
    double auc = 0.0;
    for (std::size_t i = 0; i + 1 < report.roc.size(); ++i)
        auc += 0.5 * (report.roc[i].second + report.roc[i + 1].second) *
               (report.roc[i + 1].first - report.roc[i].first);
    // Extend to the (0,0) and (1,1) corners if the threshold list misses them.
    if (!report.roc.empty()) {
        auc += 0.5 * (0.0 + report.roc.front().second) * report.roc.front().first;
        auc += 0.5 * (report.roc.back().second + 1.0) * (1.0 - report.roc.back().first);
    }
    report.auc = auc;
    return report;
}

std::vector<LagCalibration> calibrate_lag_threshold(const nn::ModelWeights& model,
                                                    const synth::LagPairSet& test_set,
                                                    const std::vector<double>& thresholds) {
    if (test_set.pairs.empty()) throw UsageError("calibrate_lag_threshold: empty test set");
    std::vector<const std::vector<double>*> a, b;
    for (const auto& p : test_set.pairs) {
        a.push_back(&p.first);
        b.push_back(&p.second);
    }
    const auto scores = predict_batch(model, a, b);
    std::vector<LagCalibration> out;
    for (double tau : thresholds) {
        LagCalibration c;
        c.threshold = tau;
        std::size_t above = 0, decided = 0, matched = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (std::abs(scores[i]) < tau) continue;
            ++above;
            const double truth = test_set.pairs[i].lag_label;
            if (truth == 0.0) continue;
            ++decided;
            if ((scores[i] > 0.0) == (truth > 0.0)) ++matched;
        }
        c.coverage = static_cast<double>(above) / static_cast<double>(scores.size());
        if (decided > 0)
            c.direction_precision = static_cast<double>(matched) / static_cast<double>(decided);
        out.push_back(c);
    }
    return out;
}

namespace {

nlohmann::json validation_to_json(const ValidationReport& v) {
    nlohmann::json j;
    j["accuracy"] = v.accuracy;
    j["auc"] = v.auc;
    nlohmann::json roc = nlohmann::json::array();
    for (const auto& [fpr, tpr] : v.roc) roc.push_back({fpr, tpr});
    j["roc"] = std::move(roc);
    nlohmann::json conf = nlohmann::json::array();
    for (const auto& c : v.confusion)
        conf.push_back({{"threshold", c.threshold}, {"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn},
                        {"fn", c.fn}});
    j["confusion"] = std::move(conf);
    return j;
}

}  // namespace

std::string causality_reports_to_json(const std::vector<CausalityStageReport>& reports) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : reports) {
        nlohmann::json j;
        j["stage"] = r.stage;
        j["m"] = r.mixin;
        j["epochs"] = r.epochs;
        j["batch_size"] = r.batch_size;
        j["final_train_loss"] = r.final_train_loss;
        j["accuracy"] = r.validation.accuracy;
        j["auc"] = r.validation.auc;
        j["validation"] = validation_to_json(r.validation);
        arr.push_back(std::move(j));
    }
    return arr.dump(2);
}

std::string lag_reports_to_json(const std::vector<LagStageReport>& reports) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : reports) {
        nlohmann::json j;
        j["stage"] = r.stage;
        j["m"] = r.mixin;
        j["epochs"] = r.epochs;
        j["batch_size"] = r.batch_size;
        j["final_train_loss"] = r.final_train_loss;
        j["test_mse"] = r.test_mse;
        j["mean_abs_error"] = r.mean_abs_error;
        j["threshold"] = r.at_default_threshold.threshold;
        if (r.at_default_threshold.direction_precision)
            j["direction_precision"] = *r.at_default_threshold.direction_precision;
        j["coverage"] = r.at_default_threshold.coverage;
        arr.push_back(std::move(j));
    }
    return arr.dump(2);
}

std::string calibration_to_json(const std::vector<LagCalibration>& calib) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : calib) {
        nlohmann::json j;
        j["threshold"] = c.threshold;
        if (c.direction_precision) j["precision"] = *c.direction_precision;
        j["coverage"] = c.coverage;
        arr.push_back(std::move(j));
    }
    return arr.dump(2);
}

std::vector<LagCalibration> calibration_from_json(const std::string& text) {
    const auto arr = nlohmann::json::parse(text);
    std::vector<LagCalibration> out;
    for (const auto& j : arr) {
        LagCalibration c;
        c.threshold = j.at("threshold").get<double>();
        if (j.contains("precision")) c.direction_precision = j.at("precision").get<double>();
        c.coverage = j.at("coverage").get<double>();
        out.push_back(c);
    }
    return out;
}

}  // namespace causalnet::det
