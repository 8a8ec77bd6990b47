#include "causalnet/gp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>

#include "causalnet/errors.hpp"
#include "json.hpp"

namespace causalnet::gp {

namespace {
constexpr double kLogNoiseLo = -12.0;
constexpr double kLogNoiseHi = 4.0;
constexpr double kGoldenTol = 1e-4;

Eigen::MatrixXd gram(const KernelParams& p, const std::vector<double>& t) {
    const auto n = static_cast<Eigen::Index>(t.size());
    Eigen::MatrixXd K(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            K(i, j) = kernel_eval(p, t[static_cast<std::size_t>(i)],
                                  t[static_cast<std::size_t>(j)], i == j);
    return K;
}

// Cholesky with jitter escalation: 0, then 1e-10 growing x10 up to 1e-4.
bool chol_with_jitter(const Eigen::MatrixXd& K, Eigen::MatrixXd& L, double& jitter_used) {
    Eigen::LLT<Eigen::MatrixXd> llt(K);
    if (llt.info() == Eigen::Success) {
        L = llt.matrixL();
        jitter_used = 0.0;
        return true;
    }
    for (double jitter = 1e-10; jitter <= 1e-4 * 1.0000001; jitter *= 10.0) {
        Eigen::MatrixXd Kj = K;
        Kj.diagonal().array() += jitter;
        llt.compute(Kj);
        if (llt.info() == Eigen::Success) {
            L = llt.matrixL();
            jitter_used = jitter;
            return true;
        }
    }
    return false;
}

double lml_for(const KernelParams& p, const std::vector<double>& t, const Eigen::VectorXd& y) {
    Eigen::MatrixXd L;
    double jitter = 0.0;
    if (!chol_with_jitter(gram(p, t), L, jitter)) return -std::numeric_limits<double>::infinity();
    const Eigen::VectorXd alpha =
        L.transpose().triangularView<Eigen::Upper>().solve(
            L.triangularView<Eigen::Lower>().solve(y));
    const double n = static_cast<double>(t.size());
    return -0.5 * y.dot(alpha) - L.diagonal().array().log().sum() -
           0.5 * n * std::log(2.0 * 3.14159265358979323846);
}

// Golden-section maximization of f on [lo, hi] down to interval width tol.
double golden_max(double lo, double hi, double tol, const std::function<double(double)>& f) {
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double x1 = b - phi * (b - a);
    double x2 = a + phi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    while (b - a > tol) {
        if (f1 < f2) {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = f(x1);
        }
    }
    return 0.5 * (a + b);
}

// Coarse scan to bracket the maximum, then golden-section refinement.
double scan_refine_max(double lo, double hi, const std::function<double(double)>& f) {
    constexpr int kScan = 33;
    double best_x = lo;
    double best_f = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < kScan; ++i) {
        const double x = lo + (hi - lo) * i / (kScan - 1);
        const double v = f(x);
        if (v > best_f) {
            best_f = v;
            best_x = x;
        }
    }
    const double step = (hi - lo) / (kScan - 1);
    const double a = std::max(lo, best_x - step);
    const double b = std::min(hi, best_x + step);
    return golden_max(a, b, kGoldenTol, f);
}

Eigen::VectorXd centered_targets(const CompoundSeries& s, double& offset) {
    const auto n = static_cast<Eigen::Index>(s.observations.size());
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = s.observations[static_cast<std::size_t>(i)].second;
    offset = y.mean();
    y.array() -= offset;
    return y;
}

std::vector<double> series_times(const CompoundSeries& s) {
    std::vector<double> t;
    t.reserve(s.observations.size());
    for (const auto& [lt, v] : s.observations) t.push_back(lt);
    return t;
}

}  // namespace

double kernel_eval(const KernelParams& params, double t1, double t2, bool same_point) {
    if (!(params.signal_variance > 0.0) || !(params.length_scale > 0.0) ||
        !(params.noise_variance > 0.0))
        throw UsageError("kernel_eval: kernel parameters must be strictly positive");
    const double d = t1 - t2;
    double v = params.signal_variance *
               std::exp(-d * d / (2.0 * params.length_scale * params.length_scale));
    if (same_point) v += params.noise_variance;
    return v;
}

GPModel::GPModel(KernelParams params, std::vector<double> inputs, std::vector<double> targets,
                 double mean_offset)
    : params_(params), inputs_(std::move(inputs)), targets_(std::move(targets)),
      mean_offset_(mean_offset) {
    if (inputs_.size() != targets_.size())
        throw UsageError("GPModel: inputs and targets must have equal length");
    if (inputs_.empty()) throw UsageError("GPModel: at least one observation required");
    const Eigen::MatrixXd K = gram(params_, inputs_);
    if (!chol_with_jitter(K, chol_, jitter_))
        throw FitError("GPModel: Gram matrix not positive definite after jitter escalation");
    Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(targets_.data(),
                                                          static_cast<Eigen::Index>(targets_.size()));
    alpha_ = chol_.transpose().triangularView<Eigen::Upper>().solve(
        chol_.triangularView<Eigen::Lower>().solve(y));
}

double GPModel::log_marginal_likelihood() const {
    const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(
        targets_.data(), static_cast<Eigen::Index>(targets_.size()));
    const double n = static_cast<double>(targets_.size());
    return -0.5 * y.dot(alpha_) - chol_.diagonal().array().log().sum() -
           0.5 * n * std::log(2.0 * 3.14159265358979323846);
}

Eigen::MatrixXd GPModel::cross_covariance(const std::vector<double>& query) const {
    const auto n = static_cast<Eigen::Index>(inputs_.size());
    const auto m = static_cast<Eigen::Index>(query.size());
    Eigen::MatrixXd Ks(n, m);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < m; ++j)
            Ks(i, j) = kernel_eval(params_, inputs_[static_cast<std::size_t>(i)],
                                   query[static_cast<std::size_t>(j)], false);
    return Ks;
}

KernelParams fit_noise_mle(const CompoundSeries& series, double signal_variance,
                           double length_scale) {
    if (series.observations.size() < 2)
        throw UsageError("fit_noise_mle: at least 2 observations required for " +
                         series.compound_id);
    const auto t = series_times(series);
    double offset = 0.0;
    const Eigen::VectorXd y = centered_targets(series, offset);
    auto objective = [&](double log_noise) {
        KernelParams p{signal_variance, length_scale, std::exp(log_noise)};
        return lml_for(p, t, y);
    };
    const double best = scan_refine_max(kLogNoiseLo, kLogNoiseHi, objective);
    KernelParams p{signal_variance, length_scale, std::exp(best)};
    if (!std::isfinite(lml_for(p, t, y)))
        throw FitError("fit_noise_mle: Gram matrix not positive definite for " +
                       series.compound_id);
    return p;
}

KernelParams fit_signal_noise_mle(const CompoundSeries& series, double length_scale) {
    if (series.observations.size() < 2)
        throw UsageError("fit_signal_noise_mle: at least 2 observations required");
    const auto t = series_times(series);
    double offset = 0.0;
    const Eigen::VectorXd y = centered_targets(series, offset);
    double log_signal = 0.0;
    double log_noise = -2.0;
    for (int sweep = 0; sweep < 8; ++sweep) {
        const double prev_s = log_signal, prev_n = log_noise;
        log_signal = scan_refine_max(kLogNoiseLo, kLogNoiseHi, [&](double ls) {
            KernelParams p{std::exp(ls), length_scale, std::exp(log_noise)};
            return lml_for(p, t, y);
        });
        log_noise = scan_refine_max(kLogNoiseLo, kLogNoiseHi, [&](double ln) {
            KernelParams p{std::exp(log_signal), length_scale, std::exp(ln)};
            return lml_for(p, t, y);
        });
        if (std::abs(log_signal - prev_s) < kGoldenTol && std::abs(log_noise - prev_n) < kGoldenTol)
            break;
    }
    return KernelParams{std::exp(log_signal), length_scale, std::exp(log_noise)};
}

GPModel fit_gp(const CompoundSeries& series, double signal_variance, double length_scale) {
    const KernelParams p = fit_noise_mle(series, signal_variance, length_scale);
    const auto t = series_times(series);
    double offset = 0.0;
    const Eigen::VectorXd y = centered_targets(series, offset);
    return GPModel(p, t, std::vector<double>(y.data(), y.data() + y.size()), offset);
}

void posterior_raw(const GPModel& model, const std::vector<double>& query,
                   std::vector<double>& mean, std::vector<double>& var) {
    const Eigen::MatrixXd Ks = model.cross_covariance(query);
    const Eigen::VectorXd mu = Ks.transpose() * model.alpha_;
    // V = L^{-1} Ks, so that diag(Ks^T (K+nI)^{-1} Ks) = colwise squared norms of V.
    const Eigen::MatrixXd V = model.chol_.triangularView<Eigen::Lower>().solve(Ks);
    mean.resize(query.size());
    var.resize(query.size());
    for (std::size_t j = 0; j < query.size(); ++j) {
        mean[j] = mu(static_cast<Eigen::Index>(j)) + model.mean_offset_;
        const double prior = model.params_.signal_variance;
        var[j] = std::max(0.0, prior - V.col(static_cast<Eigen::Index>(j)).squaredNorm());
    }
}

GPSummary posterior(const GPModel& model, const TimeGrid& grid) {
    GPSummary s;
    std::vector<double> var;
    posterior_raw(model, grid.points, s.mean, var);
    s.sd.resize(var.size());
    for (std::size_t i = 0; i < var.size(); ++i) s.sd[i] = std::sqrt(var[i]);
    return s;
}

PosteriorSampler::PosteriorSampler(const GPModel& model, const TimeGrid& grid) {
    const auto m = static_cast<Eigen::Index>(grid.points.size());
    const Eigen::MatrixXd Ks = model.cross_covariance(grid.points);
    mean = Ks.transpose() * model.alpha_;
    mean.array() += model.mean_offset_;
    Eigen::MatrixXd Kss(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j)
            Kss(i, j) = kernel_eval(model.params_, grid.points[static_cast<std::size_t>(i)],
                                    grid.points[static_cast<std::size_t>(j)], false);
    const Eigen::MatrixXd V = model.chol_.triangularView<Eigen::Lower>().solve(Ks);
    Eigen::MatrixXd cov = Kss - V.transpose() * V;
    double jitter = 0.0;
    if (!chol_with_jitter(cov, cov_factor, jitter))
        throw FitError("PosteriorSampler: posterior covariance not factorizable after jitter");
}

std::vector<double> PosteriorSampler::sample(std::uint64_t seed) const {
    Rng rng(seed);
    return sample(rng);
}

std::vector<double> PosteriorSampler::sample(Rng& rng) const {
    const auto m = mean.size();
    Eigen::VectorXd z(m);
    rng.fill_normal(z.data(), static_cast<std::size_t>(m));
    const Eigen::VectorXd draw = mean + cov_factor * z;
    return std::vector<double>(draw.data(), draw.data() + m);
}

std::vector<double> sample_function(const GPModel& model, const TimeGrid& grid,
                                    std::uint64_t seed) {
    return PosteriorSampler(model, grid).sample(seed);
}

RatioSeries log_ratio(const GPSummary& treated, const GPSummary& control) {
    if (treated.compound_id != control.compound_id)
        throw UsageError("log_ratio: compound ids differ ('" + treated.compound_id + "' vs '" +
                         control.compound_id + "')");
    if (treated.mean.size() != control.mean.size())
        throw UsageError("log_ratio: grid sizes differ");
    RatioSeries r;
    r.compound_id = treated.compound_id;
    r.values.resize(treated.mean.size());
    for (std::size_t i = 0; i < r.values.size(); ++i)
        r.values[i] = treated.mean[i] - control.mean[i];
    return r;
}

double sd_band_score(const GPSummary& treated, const GPSummary& control, const TimeGrid& grid,
                     double k) {
    if (treated.mean.size() != grid.points.size() || control.mean.size() != grid.points.size())
        throw UsageError("sd_band_score: summaries do not match the grid");
    if (!(k > 0.0)) throw UsageError("sd_band_score: k must be positive");
    auto gap = [&](std::size_t i) {
        const double sep = std::abs(treated.mean[i] - control.mean[i]);
        return std::max(0.0, sep - k * (treated.sd[i] + control.sd[i]));
    };
    double score = 0.0;
    for (std::size_t i = 0; i + 1 < grid.points.size(); ++i)
        score += 0.5 * (gap(i) + gap(i + 1)) * (grid.points[i + 1] - grid.points[i]);
    return score;
}

std::vector<std::string> rank_compounds(const std::map<std::string, double>& scores,
                                        std::size_t top_n) {
    std::vector<std::pair<std::string, double>> items(scores.begin(), scores.end());
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<std::string> out;
    out.reserve(std::min(top_n, items.size()));
    for (std::size_t i = 0; i < items.size() && i < top_n; ++i) out.push_back(items[i].first);
    return out;
}

void save_summaries(const std::string& path, const std::vector<GPSummary>& summaries) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : summaries)
        arr.push_back({{"compound_id", s.compound_id},
                       {"condition", to_string(s.condition)},
                       {"mean", s.mean},
                       {"sd", s.sd}});
    std::ofstream out(path);
    if (!out) throw FitError("cannot write summaries: " + path);
    out << arr.dump();
}

std::vector<GPSummary> load_summaries(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("cannot open summaries: " + path);
    nlohmann::json arr;
    in >> arr;
    std::vector<GPSummary> out;
    for (const auto& j : arr) {
        GPSummary s;
        s.compound_id = j.at("compound_id").get<std::string>();
        s.condition = condition_from_string(j.at("condition").get<std::string>());
        s.mean = j.at("mean").get<std::vector<double>>();
        s.sd = j.at("sd").get<std::vector<double>>();
        out.push_back(std::move(s));
    }
    return out;
}

void save_ratios(const std::string& path, const std::vector<RatioSeries>& ratios) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : ratios)
        arr.push_back({{"compound_id", r.compound_id}, {"values", r.values}});
    std::ofstream out(path);
    if (!out) throw FitError("cannot write ratios: " + path);
    out << arr.dump();
}

std::vector<RatioSeries> load_ratios(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("cannot open ratios: " + path);
    nlohmann::json arr;
    in >> arr;
    std::vector<RatioSeries> out;
    for (const auto& j : arr) {
        RatioSeries r;
        r.compound_id = j.at("compound_id").get<std::string>();
        r.values = j.at("values").get<std::vector<double>>();
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace causalnet::gp
