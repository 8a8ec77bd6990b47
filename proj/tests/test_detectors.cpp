#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "causalnet/detectors.hpp"
#include "support.hpp"

using namespace causalnet;
using namespace causalnet::det;

namespace {

const synth::GenePool& shared_pool() {
    static synth::GenePool pool = testsupport::make_pool(12, 31337);
    return pool;
}

synth::SynthConfig tiny_config(synth::Mode mode, std::uint64_t seed) {
    synth::SynthConfig cfg;
    cfg.window = 80;
    cfg.mode = mode;
    cfg.set_size = 300;
    cfg.seed = seed;
    return cfg;
}

std::vector<double> random_series(Rng& rng, std::size_t n = 80) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

}  // namespace

TEST_CASE("predict_causality is bit-exactly symmetric") {
    auto model = nn::ModelWeights::init(causality_detector_spec(), 101);
    Rng rng(102);
    for (int i = 0; i < 200; ++i) {
        const auto a = random_series(rng);
        const auto b = random_series(rng);
        const double pab = predict_causality(model, a, b);
        const double pba = predict_causality(model, b, a);
        CHECK(pab == pba);
        CHECK(pab > 0.0);
        CHECK(pab < 1.0);
    }
}

TEST_CASE("predict_lag is antisymmetric and zero on identical inputs") {
    auto model = nn::ModelWeights::init(lag_detector_spec(), 103);
    Rng rng(104);
    for (int i = 0; i < 200; ++i) {
        const auto a = random_series(rng);
        const auto b = random_series(rng);
        CHECK(std::abs(predict_lag(model, a, b) + predict_lag(model, b, a)) < 1e-12);
        CHECK(predict_lag(model, a, a) == 0.0);
    }
}

TEST_CASE("constant-zero branch features give sigmoid(head bias)") {
    auto model = nn::ModelWeights::init(causality_detector_spec(), 105);
    // Zero every branch parameter: conv bias 0 and dense bias 0 make the
    // branch output exactly zero, so the dot product is 0.
    for (std::size_t i = 0; i + 2 < model.params.size(); ++i)
        std::fill(model.params[i].tensor.values.begin(), model.params[i].tensor.values.end(),
                  0.0);
    // Head: dense(1->1) weight and bias.
    auto& head_w = model.params[model.params.size() - 2].tensor;
    auto& head_b = model.params[model.params.size() - 1].tensor;
    REQUIRE(head_w.numel() == 1);
    head_w.values[0] = 3.0;
    head_b.values[0] = -0.4;
    Rng rng(106);
    const auto a = random_series(rng);
    const auto b = random_series(rng);
    CHECK(predict_causality(model, a, b) ==
          doctest::Approx(1.0 / (1.0 + std::exp(0.4))).epsilon(1e-12));
}

TEST_CASE("input validation raises usage errors") {
    auto model = nn::ModelWeights::init(causality_detector_spec(), 107);
    Rng rng(108);
    const auto a = random_series(rng);
    auto short_b = random_series(rng, 40);
    CHECK_THROWS_AS((void)predict_causality(model, a, short_b), UsageError);
    auto lag_model = nn::ModelWeights::init(lag_detector_spec(), 109);
    CHECK_THROWS_AS((void)predict_lag(lag_model, a, short_b), UsageError);
}

TEST_CASE("stage-0 causality training learns and is deterministic") {
    CurriculumSchedule schedule;
    schedule.stages = {0};
    schedule.epochs_per_stage = 40;
    schedule.batch_size = 128;
    auto cfg = tiny_config(synth::Mode::ideal, 201);
    cfg.set_size = 1200;
    const auto result = train_causality(schedule, cfg, shared_pool(), 777);
    REQUIRE(result.reports.size() == 1);
    SUBCASE("mean probability over positives exceeds negatives on held-out data") {
        // Label oracle on a fresh test set.
        auto test_cfg = cfg;
        test_cfg.seed = 999;
        test_cfg.set_size = 100;
        const auto split = synth::build_labeled_set(test_cfg, shared_pool());
        double pos_sum = 0.0, neg_sum = 0.0;
        std::size_t pos_n = 0, neg_n = 0;
        for (const auto& p : split.test.pairs) {
            const double prob = predict_causality(result.model, p.cause, p.effect);
            if (p.label == 1.0) {
                pos_sum += prob;
                ++pos_n;
            } else {
                neg_sum += prob;
                ++neg_n;
            }
        }
        REQUIRE(pos_n > 0);
        REQUIRE(neg_n > 0);
        CHECK(pos_sum / pos_n > neg_sum / neg_n);
    }
    SUBCASE("equal seeds give identical final weights") {
        const auto again = train_causality(schedule, cfg, shared_pool(), 777);
        for (std::size_t i = 0; i < result.model.params.size(); ++i)
            CHECK(again.model.params[i].tensor.values == result.model.params[i].tensor.values);
        CHECK(again.reports[0].validation.accuracy == result.reports[0].validation.accuracy);
    }
    SUBCASE("report echoes schedule parameters") {
        CHECK(result.reports[0].epochs == 40);
        CHECK(result.reports[0].batch_size == 128);
        CHECK(result.reports[0].mixin == 0);
    }
}

TEST_CASE("stage-0 lag training beats the trivial predictor and is deterministic") {
    CurriculumSchedule schedule;
    schedule.stages = {0};
    schedule.epochs_per_stage = 40;
    schedule.batch_size = 64;
    auto cfg = tiny_config(synth::Mode::ideal, 203);
    cfg.set_size = 600;
    const auto result = train_lag(schedule, cfg, shared_pool(), 888);
    REQUIRE(result.reports.size() == 1);
    CHECK(result.reports[0].mean_abs_error < 0.5);
    SUBCASE("determinism") {
        const auto again = train_lag(schedule, cfg, shared_pool(), 888);
        for (std::size_t i = 0; i < result.model.params.size(); ++i)
            CHECK(again.model.params[i].tensor.values == result.model.params[i].tensor.values);
    }
}

TEST_CASE("roc_auc handles perfect, random and degenerate scorers") {
    SUBCASE("perfect separation gives AUC 1.0") {
        std::vector<double> scores, labels;
        Rng rng(205);
        for (int i = 0; i < 200; ++i) {
            const bool positive = i % 2 == 0;
            labels.push_back(positive ? 1.0 : 0.0);
            scores.push_back(positive ? 0.8 + 0.15 * rng.uniform() : 0.05 + 0.15 * rng.uniform());
        }
        const auto report = roc_from_scores(scores, labels);
        CHECK(report.auc == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(report.accuracy == 1.0);
        for (std::size_t i = 1; i < report.roc.size(); ++i) {
            CHECK(report.roc[i].first >= report.roc[i - 1].first);
            CHECK(report.roc[i].second >= report.roc[i - 1].second - 1e-12);
        }
    }
    SUBCASE("random scores against labels give AUC 0.5 +- 0.02 at n=1e4") {
        // Permutation oracle: scores drawn independently of the labels.
        std::vector<double> scores, labels;
        Rng rng(206);
        for (int i = 0; i < 10000; ++i) {
            labels.push_back(i % 2 == 0 ? 1.0 : 0.0);
            scores.push_back(rng.uniform());
        }
        const auto report = roc_from_scores(scores, labels);
        CHECK(std::abs(report.auc - 0.5) < 0.02);
    }
    SUBCASE("trained detector separates ideal m=0 pairs") {
        CurriculumSchedule schedule;
        schedule.stages = {0};
        schedule.epochs_per_stage = 40;
        schedule.batch_size = 64;
        auto cfg = tiny_config(synth::Mode::ideal, 205);
        cfg.set_size = 400;
        const auto result = train_causality(schedule, cfg, shared_pool(), 555);
        auto test_cfg = cfg;
        test_cfg.seed = 206;
        test_cfg.set_size = 200;
        const auto split = synth::build_labeled_set(test_cfg, shared_pool());
        const auto report = roc_auc(result.model, split.test);
        CHECK(report.auc > 0.75);
        CHECK(report.accuracy > 0.7);
    }
    SUBCASE("empty set is an error") {
        auto model = nn::ModelWeights::init(causality_detector_spec(), 209);
        synth::LabeledPairSet empty;
        CHECK_THROWS_AS((void)roc_auc(model, empty), UsageError);
    }
}

TEST_CASE("calibrate_lag_threshold equals brute-force counting") {
    auto model = nn::ModelWeights::init(lag_detector_spec(), 211);
    auto cfg = tiny_config(synth::Mode::ideal, 212);
    cfg.set_size = 500;
    const auto split = synth::build_lag_set(cfg, shared_pool());
    const std::vector<double> thresholds = {0.01, 0.025, 0.1};
    const auto calib = calibrate_lag_threshold(model, split.test, thresholds);
    REQUIRE(calib.size() == 3);
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
        // independent counting loop
        std::size_t above = 0, decided = 0, matched = 0;
        for (const auto& p : split.test.pairs) {
            const double s = predict_lag(model, p.first, p.second);
            if (std::abs(s) < thresholds[t]) continue;
            ++above;
            if (p.lag_label == 0.0) continue;
            ++decided;
            if ((s > 0) == (p.lag_label > 0)) ++matched;
        }
        const double coverage = static_cast<double>(above) / split.test.pairs.size();
        CHECK(calib[t].coverage == coverage);
        if (decided > 0) {
            REQUIRE(calib[t].direction_precision.has_value());
            CHECK(*calib[t].direction_precision ==
                  static_cast<double>(matched) / static_cast<double>(decided));
        } else {
            CHECK(!calib[t].direction_precision.has_value());
        }
    }
    SUBCASE("coverage is monotone nonincreasing in the threshold") {
        for (std::size_t t = 1; t < calib.size(); ++t)
            CHECK(calib[t].coverage <= calib[t - 1].coverage);
    }
    SUBCASE("no above-threshold pairs reports precision as absent") {
        const auto extreme = calibrate_lag_threshold(model, split.test, {1e9});
        REQUIRE(extreme.size() == 1);
        CHECK(!extreme[0].direction_precision.has_value());
        CHECK(extreme[0].coverage == 0.0);
    }
}

TEST_CASE("curriculum runs multiple stages continuing from previous weights") {
    CurriculumSchedule schedule;
    schedule.stages = {0, 2};
    schedule.epochs_per_stage = 8;
    schedule.batch_size = 64;
    auto cfg = tiny_config(synth::Mode::ideal, 213);
    cfg.set_size = 150;
    const auto result = train_causality(schedule, cfg, shared_pool(), 444);
    REQUIRE(result.reports.size() == 2);
    CHECK(result.reports[0].mixin == 0);
    CHECK(result.reports[1].mixin == 2);
    CurriculumSchedule bad;
    bad.stages = {2, 0};
    CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("report JSON serialization") {
    CausalityStageReport r;
    r.stage = 1;
    r.mixin = 2;
    r.epochs = 100;
    r.batch_size = 512;
    r.validation.accuracy = 0.91;
    r.validation.auc = 0.95;
    r.validation.roc = {{0.0, 0.0}, {0.1, 0.8}, {1.0, 1.0}};
    const auto text = causality_reports_to_json({r});
    CHECK(text.find("\"m\": 2") != std::string::npos);
    CHECK(text.find("\"epochs\": 100") != std::string::npos);
    CHECK(text.find("\"batch_size\": 512") != std::string::npos);

    std::vector<LagCalibration> calib(1);
    calib[0].threshold = 0.025;
    calib[0].direction_precision = 0.61;
    calib[0].coverage = 0.72;
    const auto back = calibration_from_json(calibration_to_json(calib));
    REQUIRE(back.size() == 1);
    CHECK(back[0].threshold == 0.025);
    CHECK(*back[0].direction_precision == 0.61);
    CHECK(back[0].coverage == 0.72);
}
