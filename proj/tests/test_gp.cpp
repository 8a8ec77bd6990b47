#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "causalnet/gp.hpp"
#include "support.hpp"

using namespace causalnet;
using namespace causalnet::gp;

TEST_CASE("kernel_eval matches the closed formula") {
    KernelParams p{1.0, 2.0, 0.1};
    CHECK(kernel_eval(p, 1.5, 1.5, true) == doctest::Approx(1.1).epsilon(1e-15));
    CHECK(kernel_eval(p, 0.0, 2.0, false) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    CHECK(kernel_eval(p, 0.0, 2.0, false) == doctest::Approx(0.60653065971263342).epsilon(1e-12));
    KernelParams bad{0.0, 2.0, 0.1};
    CHECK_THROWS_AS(kernel_eval(bad, 0, 0, false), UsageError);
}

TEST_CASE("posterior matches the 1-point closed form to 1e-8") {
    const double signal = 1.3, ell = 2.0, noise = 0.07;
    const double t0 = 1.2, y0 = 0.8;
    GPModel model(KernelParams{signal, ell, noise}, {t0}, {y0});
    const TimeGrid grid = TimeGrid::uniform(48.0);
    const GPSummary s = posterior(model, grid);
    for (std::size_t i = 0; i < grid.points.size(); ++i) {
        const auto [mean, var] =
            testsupport::gp_posterior_1pt(signal, ell, noise, t0, y0, grid.points[i]);
        CHECK(std::abs(s.mean[i] - mean) < 1e-8);
        CHECK(std::abs(s.sd[i] * s.sd[i] - var) < 1e-8);
    }
    // query at the training point itself
    const auto [m0, v0] = testsupport::gp_posterior_1pt(signal, ell, noise, t0, y0, t0);
    CHECK(m0 == doctest::Approx(y0 * signal / (signal + noise)).epsilon(1e-12));
}

TEST_CASE("posterior matches the 2-point closed form to 1e-8") {
    const double signal = 0.9, ell = 2.0, noise = 0.05;
    const double t0 = 0.5, y0 = 0.6, t1 = 2.5, y1 = -0.4;
    GPModel model(KernelParams{signal, ell, noise}, {t0, t1}, {y0, y1});
    const TimeGrid grid = TimeGrid::uniform(48.0);
    const GPSummary s = posterior(model, grid);
    for (std::size_t i = 0; i < grid.points.size(); ++i) {
        const auto [mean, var] = testsupport::gp_posterior_2pt(signal, ell, noise, t0, y0, t1, y1,
                                                               grid.points[i]);
        CHECK(std::abs(s.mean[i] - mean) < 1e-8);
        CHECK(std::abs(s.sd[i] * s.sd[i] - var) < 1e-8);
    }
}

TEST_CASE("log marginal likelihood matches dense evaluation on n<=8") {
    Rng rng(99);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t n = 2 + static_cast<std::size_t>(rng.uniform_int(7));
        std::vector<double> t(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            t[i] = 4.0 * rng.uniform();
            y[i] = rng.normal();
        }
        std::sort(t.begin(), t.end());
        const double signal = 0.5 + rng.uniform();
        const double noise = 0.05 + 0.2 * rng.uniform();
        GPModel model(KernelParams{signal, 2.0, noise}, t, y);
        const double dense = testsupport::gp_lml_dense(signal, 2.0, noise, t, y);
        CHECK(std::abs(model.log_marginal_likelihood() - dense) < 1e-8);
    }
}

TEST_CASE("far from data the posterior reverts to the prior") {
    GPModel model(KernelParams{1.7, 2.0, 0.1}, {0.5}, {3.0});
    TimeGrid far;
    far.t_max_hours = 1.0;
    far.points = {50.0, 60.0};  // many length scales away
    for (std::size_t i = 0; i < 2; ++i) {
        const GPSummary s = posterior(model, far);
        CHECK(std::abs(s.mean[i]) < 1e-6);
        CHECK(s.sd[i] == doctest::Approx(std::sqrt(1.7)).epsilon(1e-6));
    }
}

TEST_CASE("posterior mean interpolates noiseless data") {
    std::vector<double> t = {0.0, 1.0, 2.2, 3.1};
    std::vector<double> y = {0.3, -0.2, 0.9, 0.4};
    GPModel model(KernelParams{1.0, 2.0, 1e-10}, t, y);
    TimeGrid grid;
    grid.t_max_hours = 1.0;
    grid.points = t;
    const GPSummary s = posterior(model, grid);
    for (std::size_t i = 0; i < t.size(); ++i)
        CHECK(std::abs(s.mean[i] - y[i]) < 1e-6);
}

TEST_CASE("factorization reproduces the Gram matrix") {
    Rng rng(3);
    std::vector<double> t(12), y(12);
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = 4.0 * rng.uniform();
        y[i] = rng.normal();
    }
    KernelParams p{1.0, 2.0, 0.05};
    GPModel model(p, t, y);
    const auto& L = model.factor();
    Eigen::MatrixXd K(12, 12);
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 12; ++j)
            K(i, j) = kernel_eval(p, t[static_cast<std::size_t>(i)],
                                  t[static_cast<std::size_t>(j)], i == j);
    const double rel = (L * L.transpose() - K).norm() / K.norm();
    CHECK(rel < 1e-8);
}

TEST_CASE("fit_noise_mle recovers a known noise level within a factor of 3") {
    // Data from a smooth function plus known observation noise at n=20 points.
    Rng rng(1234);
    const double true_noise_sd = 0.2;
    CompoundSeries series;
    series.compound_id = "X";
    series.condition = Condition::treated;
    // Slowly varying truth, well inside what the length-2 kernel can track.
    for (int i = 0; i < 20; ++i) {
        const double t = 6.0 * i / 19.0;
        const double f = 1.2 * std::sin(0.45 * t + 0.3);
        series.observations.emplace_back(t, f + true_noise_sd * rng.normal());
    }
    const KernelParams fitted = fit_noise_mle(series, 1.0);
    const double true_var = true_noise_sd * true_noise_sd;
    CHECK(fitted.noise_variance > true_var / 3.0);
    CHECK(fitted.noise_variance < true_var * 3.0);
}

TEST_CASE("constant observations drive the noise to the lower search bound") {
    CompoundSeries series;
    series.compound_id = "C";
    for (int i = 0; i < 6; ++i) series.observations.emplace_back(0.5 * i, 4.2);
    const KernelParams fitted = fit_noise_mle(series, 1.0);
    CHECK(fitted.noise_variance <= std::exp(-12.0) * (1.0 + 1e-2));
}

TEST_CASE("sample_function is deterministic and matches posterior moments") {
    auto series = [&] {
        CompoundSeries s;
        s.compound_id = "S";
        Rng rng(5);
        for (int i = 0; i < 8; ++i)
            s.observations.emplace_back(0.5 * i, std::sin(0.5 * i) + 0.1 * rng.normal());
        return s;
    }();
    const GPModel model = fit_gp(series, 1.0);
    const TimeGrid grid = TimeGrid::uniform(48.0);

    SUBCASE("equal seeds give identical vectors") {
        const auto a = sample_function(model, grid, 77);
        const auto b = sample_function(model, grid, 77);
        CHECK(a == b);
    }

    SUBCASE("Monte-Carlo moments converge to the posterior") {
        const GPSummary s = posterior(model, grid);
        PosteriorSampler sampler(model, grid);
        const std::size_t N = 10000;
        std::vector<double> mean_acc(grid.points.size(), 0.0), sq_acc(grid.points.size(), 0.0);
        for (std::size_t k = 0; k < N; ++k) {
            const auto draw = sampler.sample(derive_seed(1000, k));
            for (std::size_t i = 0; i < draw.size(); ++i) {
                mean_acc[i] += draw[i];
                sq_acc[i] += draw[i] * draw[i];
            }
        }
        for (std::size_t i = 0; i < grid.points.size(); ++i) {
            const double emp_mean = mean_acc[i] / N;
            const double emp_var = sq_acc[i] / N - emp_mean * emp_mean;
            CHECK(std::abs(emp_mean - s.mean[i]) <=
                  3.0 * (s.sd[i] / std::sqrt(static_cast<double>(N))) + 1e-9);
            if (s.sd[i] * s.sd[i] > 1e-8)
                CHECK(emp_var == doctest::Approx(s.sd[i] * s.sd[i]).epsilon(0.05));
        }
    }
}

TEST_CASE("log_ratio subtracts means and validates ids") {
    GPSummary treated, control;
    treated.compound_id = control.compound_id = "G";
    treated.mean.assign(101, 2.0);
    control.mean.assign(101, 2.0);
    treated.sd.assign(101, 0.1);
    control.sd.assign(101, 0.1);
    SUBCASE("identical summaries give a zero ratio") {
        const RatioSeries r = log_ratio(treated, control);
        for (double v : r.values) CHECK(v == 0.0);
    }
    SUBCASE("uniform +1 offset gives a constant ratio of 1") {
        for (auto& v : treated.mean) v += 1.0;
        const RatioSeries r = log_ratio(treated, control);
        for (double v : r.values) CHECK(v == 1.0);
    }
    SUBCASE("mismatched ids are a usage error") {
        control.compound_id = "H";
        CHECK_THROWS_AS(log_ratio(treated, control), UsageError);
    }
}

TEST_CASE("sd_band_score integrates the positive band gap") {
    const TimeGrid grid = TimeGrid::uniform(48.0);
    GPSummary treated, control;
    treated.compound_id = control.compound_id = "G";
    treated.mean.assign(101, 3.0);
    control.mean.assign(101, 0.0);
    treated.sd.assign(101, 0.5);
    control.sd.assign(101, 0.5);
    SUBCASE("identical summaries score 0") {
        CHECK(sd_band_score(treated, treated, grid, 2.0) == 0.0);
    }
    SUBCASE("constant separation 3 with k=2 and sd 0.5 gives the grid span") {
        // gap = 3 - 2*(0.5+0.5) = 1 everywhere, so the integral is the span.
        CHECK(sd_band_score(treated, control, grid, 2.0) ==
              doctest::Approx(grid.span()).epsilon(1e-12));
    }
    SUBCASE("monotone nonincreasing in k") {
        Rng rng(8);
        for (auto& v : treated.mean) v = 3.0 + rng.normal();
        double prev = sd_band_score(treated, control, grid, 0.5);
        for (double k : {1.0, 1.5, 2.0, 3.0}) {
            const double cur = sd_band_score(treated, control, grid, k);
            CHECK(cur <= prev + 1e-12);
            prev = cur;
        }
    }
}

TEST_CASE("rank_compounds sorts descending with lexicographic ties") {
    std::map<std::string, double> scores{{"A", 2.0}, {"B", 5.0}};
    CHECK(rank_compounds(scores, 2) == std::vector<std::string>{"B", "A"});
    std::map<std::string, double> ties{{"B", 1.0}, {"A", 1.0}};
    CHECK(rank_compounds(ties, 2) == std::vector<std::string>{"A", "B"});
    CHECK(rank_compounds(scores, 1) == std::vector<std::string>{"B"});
}

TEST_CASE("summary and ratio persistence round-trips") {
    testsupport::TempDir dir("gp_persist");
    std::vector<GPSummary> summaries(2);
    Rng rng(17);
    for (std::size_t k = 0; k < 2; ++k) {
        summaries[k].compound_id = k == 0 ? "A" : "B";
        summaries[k].condition = k == 0 ? Condition::control : Condition::treated;
        for (int i = 0; i < 101; ++i) {
            summaries[k].mean.push_back(rng.normal());
            summaries[k].sd.push_back(std::abs(rng.normal()));
        }
    }
    const auto path = dir.file("s.json");
    save_summaries(path, summaries);
    const auto back = load_summaries(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].mean == summaries[0].mean);
    CHECK(back[1].sd == summaries[1].sd);
    CHECK(back[1].condition == Condition::treated);
}
