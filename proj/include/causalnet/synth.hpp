#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "causalnet/gp.hpp"
#include "causalnet/rng.hpp"

namespace causalnet::synth {

enum class Mode { ideal, noisy };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct SynthConfig {
    std::size_t series_length = 101;  // T
    std::size_t window = 80;          // w
    std::size_t mixin = 0;            // m
    Mode mode = Mode::noisy;
    std::size_t set_size = 1000000;  // pairs per class (labeled) / total (lag)
    double split_fraction = 0.9;
    std::uint64_t seed = 0;

    std::size_t max_lag() const { return series_length - window; }  // M_L
    void validate() const;
};

struct NormalizedRatio {
    std::string gene_id;
    std::vector<double> values;  // T values, mean 0, variance 1
};

struct SyntheticPair {
    std::vector<double> cause;   // w values
    std::vector<double> effect;  // w values
    double label = 0.0;          // 1 = causal, 0 = independent
    int lag_used = 0;
};

struct LagPair {
    std::vector<double> first;
    std::vector<double> second;
    double lag_label = 0.0;  // L / M_L in [-1, 1]
};

struct LabeledPairSet {
    std::vector<SyntheticPair> pairs;
};

struct LagPairSet {
    std::vector<LagPair> pairs;
};

// Posterior samplers for one gene under both conditions.
struct GeneSampler {
    std::string gene_id;
    gp::PosteriorSampler treated;
    gp::PosteriorSampler control;
};

using GenePool = std::vector<GeneSampler>;

// One treated-minus-control posterior draw, normalized to mean 0 variance 1.
// Constant draws are rejected and resampled from a derived seed; more than
// 100 rejections is an error.
NormalizedRatio sample_normalized_ratio(const GeneSampler& gene, std::uint64_t seed);

// Windows the two series into the shared maximally-overlapping window of
// size w. For L >= 0 the first member leads (its pattern occurs earlier);
// for L < 0 the second does.
std::pair<std::vector<double>, std::vector<double>> make_lagged_pair(
    const NormalizedRatio& r_prime, const NormalizedRatio& r, int lag, std::size_t w);

// Component draws behind one synthetic pair; recorded for test oracles.
struct ComponentDraw {
    std::size_t gene_index = 0;
    int lag = 0;
    std::vector<double> cause;   // s'_i
    std::vector<double> effect;  // s_i
};

struct ComponentLog {
    std::vector<ComponentDraw> components;
    std::size_t cause_gene_index = 0;
    std::vector<std::size_t> effect_gene_indices;
};

SyntheticPair make_positive_pair(const SynthConfig& config, const GenePool& pool,
                                 std::uint64_t seed, ComponentLog* log = nullptr);

SyntheticPair make_negative_pair(const SynthConfig& config, const GenePool& pool,
                                 std::uint64_t seed, ComponentLog* log = nullptr);

// Positive-style pair with signed primary lag; the lagging member carries the
// mixin superposition and orientation is decided by the sign of lag.
// Component draws depend only on the seed and |lag|.
LagPair make_lag_pair_at(const SynthConfig& config, const GenePool& pool, std::uint64_t seed,
                         int lag, ComponentLog* log = nullptr);

struct LabeledSplit {
    LabeledPairSet train;
    LabeledPairSet test;
};

struct LagSplit {
    LagPairSet train;
    LagPairSet test;
};

// Balanced positive/negative set, shuffled and split by split_fraction.
LabeledSplit build_labeled_set(const SynthConfig& config, const GenePool& pool, int workers = 1);

// Lag-labeled set with L uniform on [-M_L, M_L], split like the labeled set.
LagSplit build_lag_set(const SynthConfig& config, const GenePool& pool, int workers = 1);

void save_labeled_set(const std::string& path, const LabeledPairSet& set);
LabeledPairSet load_labeled_set(const std::string& path);
void save_lag_set(const std::string& path, const LagPairSet& set);
LagPairSet load_lag_set(const std::string& path);

}  // namespace causalnet::synth
