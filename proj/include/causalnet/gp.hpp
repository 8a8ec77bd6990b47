#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "causalnet/data_model.hpp"
#include "causalnet/rng.hpp"

namespace causalnet::gp {

struct KernelParams {
    double signal_variance = 1.0;
    double length_scale = 2.0;  // fixed in log-time units unless overridden
    double noise_variance = 0.1;
};

// Squared-exponential kernel with additive white noise on the diagonal.
double kernel_eval(const KernelParams& params, double t1, double t2, bool same_point);

// A fitted GP for one compound/condition: training data, kernel parameters
// and the Cholesky factor of K + noise*I. Immutable after construction.
class GPModel {
public:
    GPModel(KernelParams params, std::vector<double> inputs, std::vector<double> targets,
            double mean_offset = 0.0);

    const KernelParams& params() const { return params_; }
    const std::vector<double>& train_inputs() const { return inputs_; }
    const std::vector<double>& train_targets() const { return targets_; }
    double mean_offset() const { return mean_offset_; }

    // Lower-triangular factor L with L*L^T = K + noise*I (+ escalated jitter).
    const Eigen::MatrixXd& factor() const { return chol_; }
    double jitter_used() const { return jitter_; }

    double log_marginal_likelihood() const;

    // Cross-covariance between training inputs and query points (signal part only).
    Eigen::MatrixXd cross_covariance(const std::vector<double>& query) const;

private:
    KernelParams params_;
    std::vector<double> inputs_;
    std::vector<double> targets_;  // already centered by mean_offset_
    double mean_offset_;
    Eigen::MatrixXd chol_;
    Eigen::VectorXd alpha_;  // (K + noise I)^{-1} y
    double jitter_ = 0.0;

    friend struct PosteriorSampler;
    friend void posterior_raw(const GPModel&, const std::vector<double>&, std::vector<double>&,
                              std::vector<double>&);
};

struct GPSummary {
    std::string compound_id;
    Condition condition = Condition::control;
    std::vector<double> mean;  // 101 values
    std::vector<double> sd;    // 101 nonnegative values
};

struct RatioSeries {
    std::string compound_id;
    std::vector<double> values;  // 101 values, treated mean - control mean
};

// Maximizes the log marginal likelihood over the noise variance alone
// (signal variance and length scale held fixed). Coarse scan over
// log-noise in [-12, 4] followed by golden-section refinement to 1e-4.
KernelParams fit_noise_mle(const CompoundSeries& series, double signal_variance,
                           double length_scale = 2.0);

// Joint (signal, noise) MLE by coordinate descent over the same search
// range; used to calibrate the shared per-data-type signal variance.
KernelParams fit_signal_noise_mle(const CompoundSeries& series, double length_scale = 2.0);

// Builds a model from a series: centers the targets, fits the noise.
GPModel fit_gp(const CompoundSeries& series, double signal_variance, double length_scale = 2.0);

// Posterior mean and marginal SD (latent function, no white-noise term) on
// the grid. Mean includes the model's mean offset.
GPSummary posterior(const GPModel& model, const TimeGrid& grid);

// One joint posterior sample of the latent function over the grid.
std::vector<double> sample_function(const GPModel& model, const TimeGrid& grid,
                                    std::uint64_t seed);

// Caches the grid posterior (mean + covariance factor) for repeated sampling.
struct PosteriorSampler {
    PosteriorSampler(const GPModel& model, const TimeGrid& grid);
    std::vector<double> sample(std::uint64_t seed) const;
    std::vector<double> sample(Rng& rng) const;

    Eigen::VectorXd mean;
    Eigen::MatrixXd cov_factor;
};

RatioSeries log_ratio(const GPSummary& treated, const GPSummary& control);

// Integrated positive gap between the treated and control k*SD bands.
double sd_band_score(const GPSummary& treated, const GPSummary& control, const TimeGrid& grid,
                     double k);

// Descending score order, ties broken lexicographically, truncated to top_n.
std::vector<std::string> rank_compounds(const std::map<std::string, double>& scores,
                                        std::size_t top_n);

// JSON persistence: one record per compound/condition.
void save_summaries(const std::string& path, const std::vector<GPSummary>& summaries);
std::vector<GPSummary> load_summaries(const std::string& path);
void save_ratios(const std::string& path, const std::vector<RatioSeries>& ratios);
std::vector<RatioSeries> load_ratios(const std::string& path);

}  // namespace causalnet::gp
