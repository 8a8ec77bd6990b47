#include "causalnet/synth.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "causalnet/errors.hpp"
#include "causalnet/parallel.hpp"
#include "json.hpp"

namespace causalnet::synth {

namespace {

constexpr double kVarFloor = 1e-12;

// Population mean/variance normalization in place; false if degenerate.
bool normalize_inplace(std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= n;
    if (!(var > kVarFloor)) return false;
    const double inv_sd = 1.0 / std::sqrt(var);
    for (double& x : v) x = (x - mean) * inv_sd;
    return true;
}

struct DrawPlan {
    std::size_t gene = 0;
    int lag = 0;
};

// One component of a synthetic pair: windows of (possibly two) normalized
// ratio draws of one gene. In ideal mode both windows come from one draw.
ComponentDraw draw_component(const SynthConfig& cfg, const GenePool& pool, const DrawPlan& plan,
                             std::uint64_t draw_seed) {
    const auto& gene = pool[plan.gene];
    ComponentDraw out;
    out.gene_index = plan.gene;
    out.lag = plan.lag;
    const NormalizedRatio cause_src = sample_normalized_ratio(gene, derive_seed(draw_seed, 0));
    const NormalizedRatio effect_src = cfg.mode == Mode::ideal
                                           ? cause_src
                                           : sample_normalized_ratio(gene, derive_seed(draw_seed, 1));
    auto [c, e] = make_lagged_pair(cause_src, effect_src, plan.lag, cfg.window);
    out.cause = std::move(c);
    out.effect = std::move(e);
    return out;
}

std::vector<double> sum_effects(const std::vector<ComponentDraw>& comps, std::size_t w) {
    std::vector<double> sum(w, 0.0);
    for (const auto& c : comps)
        for (std::size_t i = 0; i < w; ++i) sum[i] += c.effect[i];
    return sum;
}

}  // namespace

std::string to_string(Mode m) { return m == Mode::ideal ? "ideal" : "noisy"; }

Mode mode_from_string(const std::string& s) {
    if (s == "ideal") return Mode::ideal;
    if (s == "noisy") return Mode::noisy;
    throw SchemaError("unknown synthetic mode '" + s + "'");
}

void SynthConfig::validate() const {
    if (!(window > 0 && window < series_length))
        throw UsageError("SynthConfig: require 0 < window < series_length");
    if (!(split_fraction > 0.0 && split_fraction < 1.0))
        throw UsageError("SynthConfig: split_fraction must be in (0, 1)");
    if (set_size == 0) throw UsageError("SynthConfig: set_size must be positive");
}

NormalizedRatio sample_normalized_ratio(const GeneSampler& gene, std::uint64_t seed) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(attempt));
        std::vector<double> u = gene.treated.sample(derive_seed(s, 0));
        const std::vector<double> c = gene.control.sample(derive_seed(s, 1));
        for (std::size_t i = 0; i < u.size(); ++i) u[i] -= c[i];
        if (normalize_inplace(u)) {
            NormalizedRatio r;
            r.gene_id = gene.gene_id;
            r.values = std::move(u);
            return r;
        }
    }
    throw FitError("sample_normalized_ratio: 100 consecutive constant draws for gene " +
                   gene.gene_id);
}

std::pair<std::vector<double>, std::vector<double>> make_lagged_pair(
    const NormalizedRatio& r_prime, const NormalizedRatio& r, int lag, std::size_t w) {
    const std::size_t T = r_prime.values.size();
    if (r.values.size() != T) throw UsageError("make_lagged_pair: series lengths differ");
    if (!(w > 0 && w < T)) throw UsageError("make_lagged_pair: require 0 < w < T");
    const int max_lag = static_cast<int>(T - w);
    if (lag > max_lag || lag < -max_lag)
        throw UsageError("make_lagged_pair: |lag| exceeds max lag " + std::to_string(max_lag));
    std::vector<double> first(w), second(w);
    if (lag >= 0) {
        for (std::size_t i = 0; i < w; ++i) {
            first[i] = r_prime.values[i + static_cast<std::size_t>(lag)];
            second[i] = r.values[i];
        }
    } else {
        for (std::size_t i = 0; i < w; ++i) {
            first[i] = r_prime.values[i];
            second[i] = r.values[i + static_cast<std::size_t>(-lag)];
        }
    }
    return {std::move(first), std::move(second)};
}

namespace {

// Positive-style construction shared by make_positive_pair and the lag sets:
// component 0 provides the causal link, components 1..m are superposed noise.
struct BuiltPair {
    std::vector<double> cause;
    std::vector<double> effect;
    int lag0 = 0;
};

BuiltPair build_positive(const SynthConfig& cfg, const GenePool& pool, std::uint64_t seed,
                         int forced_lag0, ComponentLog* log) {
    if (pool.empty()) throw UsageError("synthetic pair generation: empty gene pool");
    const std::size_t m = cfg.mixin;
    for (int attempt = 0; attempt < 100; ++attempt) {
        const std::uint64_t s = derive_seed(seed, 500, static_cast<std::uint64_t>(attempt));
        Rng rng(derive_seed(s, 0));
        std::vector<ComponentDraw> comps;
        comps.reserve(m + 1);
        for (std::size_t i = 0; i <= m; ++i) {
            DrawPlan plan;
            plan.gene = static_cast<std::size_t>(rng.uniform_int(pool.size()));
            plan.lag = static_cast<int>(rng.uniform_int(cfg.max_lag() + 1));
            if (i == 0 && forced_lag0 >= 0) plan.lag = forced_lag0;
            comps.push_back(draw_component(cfg, pool, plan, derive_seed(s, 10 + i)));
        }
        BuiltPair out;
        out.cause = comps[0].cause;
        out.effect = sum_effects(comps, cfg.window);
        out.lag0 = comps[0].lag;
        if (!normalize_inplace(out.cause) || !normalize_inplace(out.effect)) continue;
        if (log) {
            log->components = std::move(comps);
            log->cause_gene_index = log->components[0].gene_index;
        }
        return out;
    }
    throw FitError("synthetic pair generation: degenerate windows for 100 attempts");
}

}  // namespace

SyntheticPair make_positive_pair(const SynthConfig& config, const GenePool& pool,
                                 std::uint64_t seed, ComponentLog* log) {
    BuiltPair b = build_positive(config, pool, seed, -1, log);
    SyntheticPair p;
    p.cause = std::move(b.cause);
    p.effect = std::move(b.effect);
    p.label = 1.0;
    p.lag_used = b.lag0;
    return p;
}

SyntheticPair make_negative_pair(const SynthConfig& config, const GenePool& pool,
                                 std::uint64_t seed, ComponentLog* log) {
    if (pool.empty()) throw UsageError("make_negative_pair: empty gene pool");
    const std::size_t m = config.mixin;
    for (int attempt = 0; attempt < 100; ++attempt) {
        const std::uint64_t s = derive_seed(seed, 600, static_cast<std::uint64_t>(attempt));
        Rng rng(derive_seed(s, 0));
        // Cause side of one lagged pair.
        DrawPlan cause_plan;
        cause_plan.gene = static_cast<std::size_t>(rng.uniform_int(pool.size()));
        cause_plan.lag = static_cast<int>(rng.uniform_int(config.max_lag() + 1));
        ComponentDraw cause_draw = draw_component(config, pool, cause_plan, derive_seed(s, 9));
        // Effect sides of m+1 independently drawn lagged pairs.
        std::vector<ComponentDraw> comps;
        comps.reserve(m + 1);
        for (std::size_t i = 0; i <= m; ++i) {
            DrawPlan plan;
            plan.gene = static_cast<std::size_t>(rng.uniform_int(pool.size()));
            plan.lag = static_cast<int>(rng.uniform_int(config.max_lag() + 1));
            comps.push_back(draw_component(config, pool, plan, derive_seed(s, 10 + i)));
        }
        SyntheticPair p;
        p.cause = cause_draw.cause;
        p.effect = sum_effects(comps, config.window);
        p.label = 0.0;
        p.lag_used = cause_draw.lag;
        if (!normalize_inplace(p.cause) || !normalize_inplace(p.effect)) continue;
        if (log) {
            log->cause_gene_index = cause_plan.gene;
            log->effect_gene_indices.clear();
            for (const auto& c : comps) log->effect_gene_indices.push_back(c.gene_index);
            log->components = std::move(comps);
        }
        return p;
    }
    throw FitError("make_negative_pair: degenerate windows for 100 attempts");
}

LagPair make_lag_pair_at(const SynthConfig& config, const GenePool& pool, std::uint64_t seed,
                         int lag, ComponentLog* log) {
    const int max_lag = static_cast<int>(config.max_lag());
    if (lag > max_lag || lag < -max_lag)
        throw UsageError("make_lag_pair_at: |lag| exceeds max lag");
    BuiltPair b = build_positive(config, pool, seed, std::abs(lag), log);
    LagPair p;
    if (lag >= 0) {
        p.first = std::move(b.cause);
        p.second = std::move(b.effect);
    } else {
        p.first = std::move(b.effect);
        p.second = std::move(b.cause);
    }
    p.lag_label = static_cast<double>(lag) / static_cast<double>(max_lag);
    return p;
}

LabeledSplit build_labeled_set(const SynthConfig& config, const GenePool& pool, int workers) {
    config.validate();
    const std::size_t n = config.set_size;
    std::vector<SyntheticPair> pairs(2 * n);
    parallel_for(n, workers, [&](std::size_t i) {
        pairs[i] = make_positive_pair(config, pool, derive_seed(config.seed, 1, i));
    });
    parallel_for(n, workers, [&](std::size_t i) {
        pairs[n + i] = make_negative_pair(config, pool, derive_seed(config.seed, 2, i));
    });
    Rng shuffle_rng(derive_seed(config.seed, 3));
    shuffle_rng.shuffle(pairs);
    const std::size_t cut =
        static_cast<std::size_t>(std::floor(static_cast<double>(pairs.size()) *
                                            config.split_fraction));
    LabeledSplit split;
    split.train.pairs.assign(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(cut));
    split.test.pairs.assign(pairs.begin() + static_cast<std::ptrdiff_t>(cut), pairs.end());
    return split;
}

LagSplit build_lag_set(const SynthConfig& config, const GenePool& pool, int workers) {
    config.validate();
    const std::size_t n = config.set_size;
    const int max_lag = static_cast<int>(config.max_lag());
    std::vector<LagPair> pairs(n);
    parallel_for(n, workers, [&](std::size_t i) {
        const std::uint64_t s = derive_seed(config.seed, 4, i);
        Rng rng(derive_seed(s, 1));
        const int lag = static_cast<int>(rng.uniform_int(2 * static_cast<std::uint64_t>(max_lag) + 1)) -
                        max_lag;
        pairs[i] = make_lag_pair_at(config, pool, s, lag);
    });
    Rng shuffle_rng(derive_seed(config.seed, 5));
    shuffle_rng.shuffle(pairs);
    const std::size_t cut =
        static_cast<std::size_t>(std::floor(static_cast<double>(pairs.size()) *
                                            config.split_fraction));
    LagSplit split;
    split.train.pairs.assign(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(cut));
    split.test.pairs.assign(pairs.begin() + static_cast<std::ptrdiff_t>(cut), pairs.end());
    return split;
}

void save_labeled_set(const std::string& path, const LabeledPairSet& set) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : set.pairs)
        arr.push_back({{"cause", p.cause}, {"effect", p.effect}, {"label", p.label},
                       {"lag_used", p.lag_used}});
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write labeled set: " + path);
    out << arr.dump();
}

LabeledPairSet load_labeled_set(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("cannot open labeled set: " + path);
    nlohmann::json arr;
    in >> arr;
    LabeledPairSet set;
    for (const auto& j : arr) {
        SyntheticPair p;
        p.cause = j.at("cause").get<std::vector<double>>();
        p.effect = j.at("effect").get<std::vector<double>>();
        p.label = j.at("label").get<double>();
        p.lag_used = j.value("lag_used", 0);
        set.pairs.push_back(std::move(p));
    }
    return set;
}

void save_lag_set(const std::string& path, const LagPairSet& set) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : set.pairs)
        arr.push_back({{"first", p.first}, {"second", p.second}, {"lag_label", p.lag_label}});
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write lag set: " + path);
    out << arr.dump();
}

LagPairSet load_lag_set(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("cannot open lag set: " + path);
    nlohmann::json arr;
    in >> arr;
    LagPairSet set;
    for (const auto& j : arr) {
        LagPair p;
        p.first = j.at("first").get<std::vector<double>>();
        p.second = j.at("second").get<std::vector<double>>();
        p.lag_label = j.at("lag_label").get<double>();
        set.pairs.push_back(std::move(p));
    }
    return set;
}

}  // namespace causalnet::synth
