#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "causalnet/gp.hpp"
#include "causalnet/graph.hpp"
#include "causalnet/nn.hpp"

namespace causalnet::deepwide {

// d composite blocks of [dense (no bias, L1 1e-8) -> dropout 0.05 -> elu];
// first block maps gene_count -> width, last maps width -> gene_count.
nn::ModelSpec deepwide_spec(std::size_t gene_count, std::size_t depth, std::size_t width,
                            double l1 = 1e-8, double dropout = 0.05);

// Consecutive-step change vectors paired with the next step's changes,
// split temporally (train strictly precedes test).
struct ChangeDataset {
    std::size_t gene_count = 0;
    std::vector<std::string> gene_ids;
    std::vector<std::vector<double>> inputs;   // delta_i
    std::vector<std::vector<double>> targets;  // delta_{i+1}
    std::size_t train_count = 0;

    std::size_t test_count() const { return inputs.size() - train_count; }
};

ChangeDataset build_change_dataset(const std::vector<gp::RatioSeries>& ratios,
                                   double train_fraction = 0.9);

// Mean squared error of predicting no change in the change (persistence).
double persistence_mse(const ChangeDataset& data, bool train_split);

struct RelativeMSEReport {
    std::size_t depth = 0;
    std::size_t width = 0;
    std::size_t parameter_count = 0;
    double train_mse = 0.0;
    double test_mse = 0.0;
    double persistence_train_mse = 0.0;
    double persistence_test_mse = 0.0;
    std::optional<double> relative_train_mse;
    std::optional<double> relative_test_mse;
    bool generate = false;  // top 10 by relative test MSE
};

struct TrainedDeepWide {
    nn::ModelWeights net;
    RelativeMSEReport report;
};

TrainedDeepWide train_deepwide(std::size_t depth, std::size_t width, const ChangeDataset& data,
                               std::size_t epochs, std::size_t batch_size, std::uint64_t seed,
                               std::size_t epoch_offset = 0);

// Pretraining pass over the union of datasets followed by a fine-tuning pass
// on the target; optimizer state carries over (one continuous run).
TrainedDeepWide pretrain_then_finetune(std::size_t depth, std::size_t width,
                                       const std::vector<const ChangeDataset*>& all_datasets,
                                       const ChangeDataset& target, std::size_t pretrain_epochs,
                                       std::size_t finetune_epochs, std::size_t batch_size,
                                       std::uint64_t seed);

struct ExtractionConfig {
    std::size_t max_degree = 3;
    std::size_t max_genes = 100;
    std::vector<std::string> gene_subset;  // ordered by the SD ranking
};

struct UnitEdge {
    std::string from, to;
    double weight = 0.0;
    std::size_t layer = 0;
};

struct UnitGraph {
    std::vector<std::string> gene_nodes;
    std::vector<std::string> hidden_nodes;
    std::vector<UnitEdge> edges;
};

// Positive-weight connections, per-layer sparsity cap ceil(sqrt(2*possible)),
// layer-wise lowest-weight pruning to the degree bound, then restriction of
// gene nodes to the subset; isolated units are dropped.
UnitGraph extract_graph(const nn::ModelWeights& net, const std::vector<std::string>& gene_ids,
                        const ExtractionConfig& config);

graph::CausalGraph to_causal_graph(const UnitGraph& units,
                                   const std::map<std::string, graph::Regulation>& regulation);

// Ascending relative test MSE (absent values sort last), ties by parameter
// count; flags the top 10 for graph generation.
std::vector<RelativeMSEReport> rank_deepwide_models(std::vector<RelativeMSEReport> reports);

}  // namespace causalnet::deepwide
