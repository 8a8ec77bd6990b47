#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "causalnet/synth.hpp"
#include "support.hpp"

using namespace causalnet;
using namespace causalnet::synth;

namespace {

const GenePool& shared_pool() {
    static GenePool pool = testsupport::make_pool(12, 424242);
    return pool;
}

SynthConfig desk_config(Mode mode, std::size_t mixin, std::uint64_t seed) {
    SynthConfig cfg;
    cfg.series_length = 101;
    cfg.window = 80;
    cfg.mixin = mixin;
    cfg.mode = mode;
    cfg.set_size = 50;
    cfg.split_fraction = 0.9;
    cfg.seed = seed;
    return cfg;
}

void check_normalized(const std::vector<double>& v, double tol) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    CHECK(std::abs(mean) < tol);
    CHECK(std::abs(var - 1.0) < tol);
}

}  // namespace

TEST_CASE("sample_normalized_ratio is normalized and deterministic") {
    const auto& pool = shared_pool();
    const auto r1 = sample_normalized_ratio(pool[0], 7);
    const auto r2 = sample_normalized_ratio(pool[0], 7);
    CHECK(r1.values == r2.values);
    CHECK(r1.values.size() == 101);
    check_normalized(r1.values, 1e-9);
}

TEST_CASE("different seeds give distinct draws") {
    const auto& pool = shared_pool();
    std::size_t distinct = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        const auto a = sample_normalized_ratio(pool[1], derive_seed(1, s));
        const auto b = sample_normalized_ratio(pool[1], derive_seed(2, s));
        if (a.values != b.values) ++distinct;
    }
    CHECK(distinct == 100);
}

TEST_CASE("make_lagged_pair windows and shifts correctly") {
    NormalizedRatio rp, r;
    rp.gene_id = r.gene_id = "G";
    for (int i = 0; i < 101; ++i) {
        rp.values.push_back(i);
        r.values.push_back(1000 + i);
    }
    SUBCASE("lag 0 takes the leading windows") {
        const auto [c, e] = make_lagged_pair(rp, r, 0, 80);
        CHECK(c.front() == 0.0);
        CHECK(c.back() == 79.0);
        CHECK(e.front() == 1000.0);
        CHECK(e.back() == 1079.0);
    }
    SUBCASE("positive lag shifts the first member") {
        const auto [c, e] = make_lagged_pair(rp, r, 21, 80);
        CHECK(c.front() == 21.0);
        CHECK(c.back() == 100.0);
        CHECK(e.front() == 1000.0);
    }
    SUBCASE("negative lag shifts the second member") {
        const auto [c, e] = make_lagged_pair(rp, r, -21, 80);
        CHECK(c.front() == 0.0);
        CHECK(e.front() == 1021.0);
    }
    SUBCASE("admissible lags are [-21, 21] for w=80, T=101") {
        CHECK_NOTHROW(make_lagged_pair(rp, r, 21, 80));
        CHECK_NOTHROW(make_lagged_pair(rp, r, -21, 80));
        CHECK_THROWS_AS(make_lagged_pair(rp, r, 22, 80), UsageError);
        CHECK_THROWS_AS(make_lagged_pair(rp, r, -22, 80), UsageError);
    }
}

TEST_CASE("positive pairs superpose mixins and renormalize") {
    const auto& pool = shared_pool();
    SUBCASE("emitted members are normalized to mean 0 variance 1") {
        const auto cfg = desk_config(Mode::noisy, 2, 11);
        for (std::uint64_t i = 0; i < 20; ++i) {
            const auto p = make_positive_pair(cfg, pool, derive_seed(11, i));
            CHECK(p.cause.size() == 80);
            CHECK(p.effect.size() == 80);
            CHECK(p.label == 1.0);
            check_normalized(p.cause, 1e-6);
            check_normalized(p.effect, 1e-6);
        }
    }
    SUBCASE("m=2 pre-normalization effect equals the sum of the logged components") {
        const auto cfg = desk_config(Mode::noisy, 2, 13);
        ComponentLog log;
        const auto p = make_positive_pair(cfg, pool, 999, &log);
        REQUIRE(log.components.size() == 3);
        std::vector<double> sum(80, 0.0);
        for (const auto& c : log.components)
            for (std::size_t i = 0; i < 80; ++i) sum[i] += c.effect[i];
        // Renormalizing the recomputed sum must reproduce the emitted effect.
        double mean = 0.0;
        for (double x : sum) mean += x;
        mean /= 80.0;
        double var = 0.0;
        for (double x : sum) var += (x - mean) * (x - mean);
        var /= 80.0;
        for (std::size_t i = 0; i < 80; ++i)
            CHECK(p.effect[i] ==
                  doctest::Approx((sum[i] - mean) / std::sqrt(var)).epsilon(1e-9));
    }
    SUBCASE("m=0 effect is the renormalized single component") {
        const auto cfg = desk_config(Mode::noisy, 0, 17);
        ComponentLog log;
        const auto p = make_positive_pair(cfg, pool, 555, &log);
        REQUIRE(log.components.size() == 1);
    }
    SUBCASE("ideal mode with L=0 and m=0 makes cause and effect identical") {
        auto cfg = desk_config(Mode::ideal, 0, 19);
        std::size_t zero_lag_pairs = 0;
        for (std::uint64_t i = 0; i < 100; ++i) {
            ComponentLog log;
            const auto p = make_positive_pair(cfg, pool, derive_seed(19, i), &log);
            if (log.components[0].lag != 0) continue;
            ++zero_lag_pairs;
            CHECK(p.cause == p.effect);
        }
        CHECK(zero_lag_pairs > 0);
    }
}

TEST_CASE("negative pairs: collision rate matches the sampling formula") {
    const auto& pool = shared_pool();  // 12 genes
    const auto cfg = desk_config(Mode::noisy, 2, 23);
    const std::size_t trials = 10000;
    std::size_t no_collision = 0;
    for (std::uint64_t i = 0; i < trials; ++i) {
        ComponentLog log;
        const auto p = make_negative_pair(cfg, pool, derive_seed(23, i), &log);
        CHECK(p.label == 0.0);
        bool collided = false;
        for (auto g : log.effect_gene_indices)
            if (g == log.cause_gene_index) collided = true;
        if (!collided) ++no_collision;
    }
    // With-replacement sampling: P(no collision) = (1 - 1/P)^(m+1).
    const double p_expected = std::pow(1.0 - 1.0 / 12.0, 3);
    const double p_emp = static_cast<double>(no_collision) / trials;
    const double sigma = std::sqrt(p_expected * (1 - p_expected) / trials);
    CHECK(std::abs(p_emp - p_expected) < 3.0 * sigma + 1e-12);
}

TEST_CASE("labeled sets are balanced, shuffled, split and deterministic") {
    const auto& pool = shared_pool();
    auto cfg = desk_config(Mode::noisy, 0, 29);
    cfg.set_size = 50;
    const auto split = build_labeled_set(cfg, pool);
    SUBCASE("set_size 50 per class with split 0.9 gives 90 train / 10 test") {
        CHECK(split.train.pairs.size() == 90);
        CHECK(split.test.pairs.size() == 10);
    }
    SUBCASE("class balance holds exactly in the combined set") {
        std::size_t positives = 0;
        for (const auto& p : split.train.pairs) positives += p.label == 1.0;
        for (const auto& p : split.test.pairs) positives += p.label == 1.0;
        CHECK(positives == 50);
    }
    SUBCASE("identical config and seed give bit-identical sets") {
        const auto again = build_labeled_set(cfg, pool);
        REQUIRE(again.train.pairs.size() == split.train.pairs.size());
        for (std::size_t i = 0; i < split.train.pairs.size(); ++i) {
            CHECK(again.train.pairs[i].cause == split.train.pairs[i].cause);
            CHECK(again.train.pairs[i].effect == split.train.pairs[i].effect);
            CHECK(again.train.pairs[i].label == split.train.pairs[i].label);
        }
    }
    SUBCASE("worker count does not change the result") {
        const auto parallel = build_labeled_set(cfg, pool, 4);
        for (std::size_t i = 0; i < split.train.pairs.size(); ++i)
            CHECK(parallel.train.pairs[i].cause == split.train.pairs[i].cause);
    }
}

TEST_CASE("lag sets: labels, orientation swap, symmetry") {
    const auto& pool = shared_pool();
    auto cfg = desk_config(Mode::noisy, 0, 31);
    SUBCASE("lag 21 labels 1.0, lag 0 labels 0.0, lag -21 labels -1.0") {
        CHECK(make_lag_pair_at(cfg, pool, 1, 21).lag_label == 1.0);
        CHECK(make_lag_pair_at(cfg, pool, 1, 0).lag_label == 0.0);
        CHECK(make_lag_pair_at(cfg, pool, 1, -21).lag_label == -1.0);
    }
    SUBCASE("swapping orientation negates the label and swaps members") {
        for (std::uint64_t s = 0; s < 10; ++s) {
            const auto fwd = make_lag_pair_at(cfg, pool, derive_seed(31, s), 13);
            const auto bwd = make_lag_pair_at(cfg, pool, derive_seed(31, s), -13);
            CHECK(fwd.lag_label == -bwd.lag_label);
            CHECK(fwd.first == bwd.second);
            CHECK(fwd.second == bwd.first);
        }
    }
    SUBCASE("label distribution is symmetric (chi-square, p > 0.01)") {
        // Count the raw lag draws the set builder uses, 1e5 draws.
        std::map<int, std::size_t> counts;
        for (std::size_t i = 0; i < 100000; ++i) {
            const std::uint64_t s = derive_seed(37, 4, i);
            Rng rng(derive_seed(s, 1));
            const int lag = static_cast<int>(rng.uniform_int(43)) - 21;
            counts[lag]++;
        }
        double chi2 = 0.0;
        for (int l = 1; l <= 21; ++l) {
            const double a = static_cast<double>(counts[l]);
            const double b = static_cast<double>(counts[-l]);
            if (a + b > 0) chi2 += (a - b) * (a - b) / (a + b);
        }
        // 0.99 quantile of chi-square with 21 degrees of freedom.
        CHECK(chi2 < 38.9322);
    }
    SUBCASE("members are normalized") {
        const auto p = make_lag_pair_at(cfg, pool, 77, -8);
        check_normalized(p.first, 1e-6);
        check_normalized(p.second, 1e-6);
    }
    SUBCASE("split arithmetic matches the labeled set") {
        cfg.set_size = 100;
        cfg.seed = 41;
        const auto split = build_lag_set(cfg, pool);
        CHECK(split.train.pairs.size() == 90);
        CHECK(split.test.pairs.size() == 10);
        for (const auto& p : split.train.pairs) CHECK(std::abs(p.lag_label) <= 1.0);
    }
}

TEST_CASE("labeled and lag sets persist through JSON") {
    testsupport::TempDir dir("synth_persist");
    const auto& pool = shared_pool();
    auto cfg = desk_config(Mode::noisy, 0, 43);
    cfg.set_size = 5;
    const auto split = build_labeled_set(cfg, pool);
    const auto path = dir.file("pairs.json");
    save_labeled_set(path, split.train);
    const auto back = load_labeled_set(path);
    REQUIRE(back.pairs.size() == split.train.pairs.size());
    for (std::size_t i = 0; i < back.pairs.size(); ++i) {
        CHECK(back.pairs[i].cause == split.train.pairs[i].cause);
        CHECK(back.pairs[i].label == split.train.pairs[i].label);
    }
    const auto lags = build_lag_set(cfg, pool);
    const auto lpath = dir.file("lags.json");
    save_lag_set(lpath, lags.test);
    const auto lback = load_lag_set(lpath);
    REQUIRE(lback.pairs.size() == lags.test.pairs.size());
    CHECK(lback.pairs[0].lag_label == lags.test.pairs[0].lag_label);
}
