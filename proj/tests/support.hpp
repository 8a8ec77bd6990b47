#pragma once

// Shared fixtures and independent oracles for the test suites. Oracles here
// deliberately avoid the library's linear-algebra path (hand-rolled
// Gauss-Jordan, direct formula evaluation) so they stay independent of the
// code they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "causalnet/data_model.hpp"
#include "causalnet/gp.hpp"
#include "causalnet/nn.hpp"
#include "causalnet/rng.hpp"
#include "causalnet/synth.hpp"

namespace testsupport {

// ---- synthetic observation fixture ----
//
// A small universe of genes with diverse smooth response shapes: control is
// a slow drift, treated adds a gene-specific bump/decay response. Replicated
// noisy observations at a handful of time points.
inline std::vector<causalnet::RawObservation> make_universe(std::size_t n_genes,
                                                            std::uint64_t seed,
                                                            double noise_sd = 0.25,
                                                            std::size_t replicates = 3) {
    using causalnet::RawObservation;
    causalnet::Rng rng(seed);
    const std::vector<double> hours = {0.0, 1.0, 2.0, 4.0, 6.0, 9.0,
                                       13.0, 18.0, 24.0, 31.0, 39.0, 48.0};
    std::vector<RawObservation> out;
    for (std::size_t g = 0; g < n_genes; ++g) {
        char name[16];
        std::snprintf(name, sizeof(name), "G%03zu", g);
        const double base = 6.0 + 4.0 * rng.uniform();
        const double drift = 0.4 * (rng.uniform() - 0.5);
        const double amp1 = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (0.8 + 2.0 * rng.uniform());
        const double amp2 = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (0.5 + 1.5 * rng.uniform());
        const double peak1 = 0.3 + 1.6 * rng.uniform();
        const double peak2 = 2.0 + 1.7 * rng.uniform();
        const double width1 = 0.35 + 0.8 * rng.uniform();
        const double width2 = 0.35 + 0.8 * rng.uniform();
        const double phase = 6.2831853 * rng.uniform();
        const double wobble = 0.35 * rng.uniform();
        const double osc_amp = 0.4 + 0.6 * rng.uniform();
        const double osc_freq = 1.8 + 1.2 * rng.uniform();
        const double osc_phase = 6.2831853 * rng.uniform();
        for (double h : hours) {
            const double lt = std::log1p(h);
            const double control_mean = base + drift * lt + wobble * std::sin(lt * 1.7 + phase);
            const double bump1 = std::exp(-(lt - peak1) * (lt - peak1) / (2 * width1 * width1));
            const double bump2 = std::exp(-(lt - peak2) * (lt - peak2) / (2 * width2 * width2));
            const double treated_mean = control_mean + amp1 * bump1 + amp2 * bump2 +
                                        osc_amp * std::sin(osc_freq * lt + osc_phase);
            for (std::size_t r = 0; r < replicates; ++r) {
                char rep[8];
                std::snprintf(rep, sizeof(rep), "r%zu", r);
                out.push_back({name, causalnet::Condition::control, rep, h,
                               control_mean + noise_sd * rng.normal()});
                out.push_back({name, causalnet::Condition::treated, rep, h,
                               treated_mean + noise_sd * rng.normal()});
            }
        }
    }
    return out;
}

// Fit a gene pool from a fixture universe (shared signal variance, per-gene
// noise MLE), mirroring the gp-fit pipeline.
inline causalnet::synth::GenePool make_pool(std::size_t n_genes, std::uint64_t seed,
                                            double t_max_hours = 48.0, double signal = 1.0,
                                            double noise_sd = 0.25) {
    using namespace causalnet;
    const auto obs = make_universe(n_genes, seed, noise_sd);
    auto groups = group_by_compound(obs);
    const TimeGrid grid = TimeGrid::uniform(t_max_hours);
    std::map<std::string, std::pair<std::optional<gp::GPModel>, std::optional<gp::GPModel>>> fits;
    for (const auto& [key, series] : groups) {
        gp::GPModel model = gp::fit_gp(series, signal);
        auto& slot = fits[key.first];
        if (key.second == Condition::treated) slot.first = std::move(model);
        else slot.second = std::move(model);
    }
    synth::GenePool pool;
    for (const auto& [gene, pair] : fits)
        pool.push_back({gene, gp::PosteriorSampler(*pair.first, grid),
                        gp::PosteriorSampler(*pair.second, grid)});
    return pool;
}

// ---- independent GP oracles ----

inline double se_kernel(double signal, double ell, double t1, double t2) {
    const double d = t1 - t2;
    return signal * std::exp(-d * d / (2.0 * ell * ell));
}

// Posterior mean/variance for a single training point, by the closed form.
inline std::pair<double, double> gp_posterior_1pt(double signal, double ell, double noise,
                                                  double t0, double y0, double t) {
    const double kxx = signal + noise;
    const double ks = se_kernel(signal, ell, t, t0);
    const double mean = ks * y0 / kxx;
    const double var = signal - ks * ks / kxx;
    return {mean, var};
}

// Posterior mean/variance for two training points via the explicit 2x2 inverse.
inline std::pair<double, double> gp_posterior_2pt(double signal, double ell, double noise,
                                                  double t0, double y0, double t1, double y1,
                                                  double t) {
    const double a = signal + noise;
    const double b = se_kernel(signal, ell, t0, t1);
    const double det = a * a - b * b;
    // K^{-1} = [[a, -b], [-b, a]] / det
    const double k0 = se_kernel(signal, ell, t, t0);
    const double k1 = se_kernel(signal, ell, t, t1);
    const double alpha0 = (a * y0 - b * y1) / det;
    const double alpha1 = (-b * y0 + a * y1) / det;
    const double mean = k0 * alpha0 + k1 * alpha1;
    const double q0 = (a * k0 - b * k1) / det;
    const double q1 = (-b * k0 + a * k1) / det;
    const double var = signal - (k0 * q0 + k1 * q1);
    return {mean, var};
}

// Dense log marginal likelihood via Gauss-Jordan inverse and an LU
// determinant, independent of any Cholesky code.
inline double gp_lml_dense(double signal, double ell, double noise,
                           const std::vector<double>& t, const std::vector<double>& y) {
    const std::size_t n = t.size();
    std::vector<std::vector<double>> K(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            K[i][j] = se_kernel(signal, ell, t[i], t[j]) + (i == j ? noise : 0.0);
    // determinant via unpivoted LU (SPD, safe)
    std::vector<std::vector<double>> lu = K;
    double logdet = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        logdet += std::log(lu[k][k]);
        for (std::size_t i = k + 1; i < n; ++i) {
            const double f = lu[i][k] / lu[k][k];
            for (std::size_t j = k; j < n; ++j) lu[i][j] -= f * lu[k][j];
        }
    }
    // inverse via Gauss-Jordan
    std::vector<std::vector<double>> aug(n, std::vector<double>(2 * n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) aug[i][j] = K[i][j];
        aug[i][n + i] = 1.0;
    }
    for (std::size_t k = 0; k < n; ++k) {
        const double piv = aug[k][k];
        for (std::size_t j = 0; j < 2 * n; ++j) aug[k][j] /= piv;
        for (std::size_t i = 0; i < n; ++i) {
            if (i == k) continue;
            const double f = aug[i][k];
            for (std::size_t j = 0; j < 2 * n; ++j) aug[i][j] -= f * aug[k][j];
        }
    }
    double quad = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) quad += y[i] * aug[i][n + j] * y[j];
    return -0.5 * quad - 0.5 * logdet -
           0.5 * static_cast<double>(n) * std::log(2.0 * 3.14159265358979323846);
}

// ---- finite-difference gradient oracle ----

// Fills every parameter (biases included) with values bounded away from
// zero. Central differences around a relu kink are invalid, and zero-init
// biases put dead units exactly on the kink.
inline void randomize_params(causalnet::nn::ModelWeights& model, causalnet::Rng& rng,
                             double scale = 0.4) {
    for (auto& p : model.params)
        for (auto& v : p.tensor.values) {
            v = scale * rng.normal();
            const double floor = 0.1 * scale;
            if (std::abs(v) < floor) v = v < 0.0 ? -floor : floor;
        }
}

// Central-difference check of every parameter gradient of a model under a
// given loss; returns the worst relative error.
template <typename LossFn>
double gradient_check(causalnet::nn::ModelWeights& model,
                      const std::vector<causalnet::nn::Tensor>& inputs, LossFn loss_of_output,
                      std::uint64_t seed, double h = 1e-4) {
    using namespace causalnet::nn;
    auto fr = forward(model, inputs, true, seed);
    const auto base = loss_of_output(fr.output);
    const auto grads = backward(model, *fr.cache, base.grad);
    double worst = 0.0;
    for (std::size_t pi = 0; pi < model.params.size(); ++pi) {
        for (std::size_t k = 0; k < model.params[pi].tensor.numel(); ++k) {
            double& w = model.params[pi].tensor.values[k];
            const double orig = w;
            w = orig + h;
            const double f_plus =
                loss_of_output(forward(model, inputs, true, seed).output).value +
                l1_penalty(model);
            w = orig - h;
            const double f_minus =
                loss_of_output(forward(model, inputs, true, seed).output).value +
                l1_penalty(model);
            w = orig;
            const double fd = (f_plus - f_minus) / (2.0 * h);
            const double an = grads[pi].values[k];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
            worst = std::max(worst, std::abs(fd - an) / denom);
        }
    }
    return worst;
}

// ---- misc ----

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("causalnet_test_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return s;
}

}  // namespace testsupport
