#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "causalnet/gp.hpp"
#include "causalnet/nn.hpp"

namespace causalnet::autoenc {

// Conv autoencoder over full-length ratio series: conv -> avg_pool2 -> elu,
// then nearest-neighbor upsample + transposed conv back to the series length.
nn::ModelSpec autoencoder_spec(std::size_t series_length, std::size_t window,
                               std::size_t feature_dim);

struct ConvAutoencoder {
    std::size_t window = 0;
    std::size_t feature_dim = 0;
    nn::ModelWeights net;
    double validation_mse = 0.0;
};

struct TrainSettings {
    std::size_t max_epochs = 200;
    std::size_t batch_size = 32;
    std::size_t patience = 10;
    double min_delta = 1e-5;
    double split_fraction = 0.9;
};

struct TrainOutcome {
    std::size_t window = 0;
    std::size_t feature_dim = 0;
    std::optional<ConvAutoencoder> model;  // absent when training diverged
    std::string error;
};

// Trains one autoencoder per (window, feature_dim) combination; a diverging
// model is reported as an error entry and the rest continue.
std::vector<TrainOutcome> train_autoencoders(const std::vector<gp::RatioSeries>& ratios,
                                             const std::vector<std::size_t>& window_sizes,
                                             const std::vector<std::size_t>& feature_dims,
                                             const TrainSettings& settings, std::uint64_t seed,
                                             int workers = 1);

struct FeatureOccurrence {
    std::vector<double> feature;
    std::string gene;
    std::size_t time_index = 0;  // window center
};

// Slides the trained encoder convolution over every series with stride 1.
std::vector<FeatureOccurrence> extract_occurrences(const ConvAutoencoder& encoder,
                                                   const std::vector<gp::RatioSeries>& ratios);

// An approximate match between two occurrences of distinct genes; indices
// point into the occurrence list passed to match_occurrences.
struct Witness {
    std::size_t first = 0;
    std::size_t second = 0;
};

struct MatchSettings {
    std::size_t occurrence_cap = 100000;  // subsample bound before O(N^2) matching
    std::uint64_t subsample_seed = 0;
};

std::vector<Witness> match_occurrences(const std::vector<FeatureOccurrence>& occurrences,
                                       double distance_threshold,
                                       const MatchSettings& settings = {});

struct EdgeSets {
    std::set<std::pair<std::string, std::string>> undirected;  // canonical pairs
    std::set<std::pair<std::string, std::string>> directed;    // (from, to)
};

// Lifts witnesses to gene edges with the >= n rule, then removes directed
// edges that conflict with an undirected edge or an opposite directed edge.
EdgeSets lift_to_genes(const std::vector<FeatureOccurrence>& occurrences,
                       const std::vector<Witness>& witnesses, std::size_t n);

// Gene pairs with enough witnesses for any edge, before conflict pruning;
// this count is monotone in the distance threshold.
std::size_t count_connected_pairs(const std::vector<FeatureOccurrence>& occurrences,
                                  const std::vector<Witness>& witnesses, std::size_t n);

struct ThresholdResult {
    double threshold = 0.0;
    bool target_reached = true;
};

// Smallest distance threshold (24-step bisection over [0, max distance])
// whose pre-pruning edge count reaches target_edges.
ThresholdResult solve_threshold(const std::vector<FeatureOccurrence>& occurrences, std::size_t n,
                                std::size_t target_edges, const MatchSettings& settings = {});

// Fraction-of-conflicting-witnesses consistency: a directed witness conflicts
// when its gene pair also has directed witnesses in the opposite order.
double witness_consistency(const std::vector<FeatureOccurrence>& occurrences,
                           const std::vector<Witness>& witnesses);

struct ModelScore {
    std::size_t window = 0;
    std::size_t feature_dim = 0;
    std::size_t n_witnesses = 0;
    double reconstruction_mse = 0.0;
    double consistency = 1.0;
    std::size_t rank = 0;      // 1-based after ranking
    bool generate = false;     // top 3 per window size
};

// Consistency descending, validation MSE ascending on ties; flags the top
// three entries per window size for graph generation.
std::vector<ModelScore> rank_models(std::vector<ModelScore> models);

}  // namespace causalnet::autoenc
