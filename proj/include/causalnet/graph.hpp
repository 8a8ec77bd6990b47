#pragma once

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "causalnet/detectors.hpp"
#include "causalnet/gp.hpp"

namespace causalnet::graph {

enum class Regulation { up, down };

struct GraphNode {
    std::string compound_id;
    Regulation regulation = Regulation::up;
    double sd_score = 0.0;
};

struct UndirectedEdge {
    std::string a, b;  // canonical: a < b
    double probability = 0.0;
};

struct DirectedEdge {
    std::string from, to;
    double probability = 0.0;  // calibrated direction precision at tau
    double lag_score = 0.0;
    double undirected_probability = 0.0;
};

struct CausalGraph {
    std::vector<GraphNode> nodes;
    std::vector<UndirectedEdge> undirected_edges;
    std::vector<DirectedEdge> directed_edges;
};

enum class WindowPolicy { leading, trailing, centered };

std::string to_string(WindowPolicy p);
WindowPolicy window_policy_from_string(const std::string& s);

struct SynthesisConfig {
    std::vector<std::string> gene_subset;  // ordered, from rank_compounds
    double probability_cutoff = 0.7;
    double lag_threshold = 0.025;
    WindowPolicy window_policy = WindowPolicy::centered;
    std::size_t window = 80;
};

// Normalizes the full ratio series (mean 0, variance 1) and cuts the length-w
// window; nullopt for zero-variance series (excluded with a warning upstream).
std::optional<std::vector<double>> prepare_input(const gp::RatioSeries& ratio,
                                                 WindowPolicy policy, std::size_t w);

// One scoreable gene: the windowed input plus node annotations.
struct GeneInput {
    std::string compound_id;
    std::vector<double> window;
    Regulation regulation = Regulation::up;
    double sd_score = 0.0;
};

std::vector<GeneInput> prepare_gene_inputs(const std::vector<gp::RatioSeries>& ratios,
                                           const std::map<std::string, double>& sd_scores,
                                           const SynthesisConfig& config,
                                           std::vector<std::string>* warnings = nullptr);

using PairScorer =
    std::function<double(const std::vector<double>&, const std::vector<double>&)>;

// Scores every unordered pair in the subset and keeps those at or above the
// cutoff; isolated nodes are dropped.
CausalGraph synth_undirected(const PairScorer& scorer, const std::vector<GeneInput>& genes,
                             const SynthesisConfig& config, int workers = 1);

// Directs each undirected edge whose |lag score| clears the threshold; the
// directed edge carries the calibrated direction precision for the threshold.
CausalGraph refine_directed(const CausalGraph& graph, const PairScorer& lag_scorer,
                            const std::vector<GeneInput>& genes, const SynthesisConfig& config,
                            const std::vector<det::LagCalibration>& calibration,
                            std::vector<std::string>* warnings = nullptr, int workers = 1);

void export_dot(const CausalGraph& graph, const std::string& path);
std::string graph_to_dot(const CausalGraph& graph);
void export_json(const CausalGraph& graph, const std::string& path);
std::string graph_to_json(const CausalGraph& graph);
CausalGraph import_json(const std::string& path);
CausalGraph graph_from_json(const std::string& text);

struct ReferenceGraph {
    std::set<std::pair<std::string, std::string>> edges;  // canonical pairs
    std::set<std::string> universe;                       // compounds with usable profiles
    std::string provenance;
};

// Pearson-correlation reference over per-compound signature rows; edge iff
// correlation >= threshold. Zero-variance rows are excluded with a warning.
ReferenceGraph build_correlation_reference(
    const std::vector<std::pair<std::string, std::vector<double>>>& profiles, double threshold,
    std::vector<std::string>* warnings = nullptr);

struct ReferenceComparison {
    std::size_t restricted_edges = 0;
    std::size_t overlap = 0;
    std::optional<double> accuracy;
};

ReferenceComparison compare_to_reference(const CausalGraph& graph, const ReferenceGraph& ref);

}  // namespace causalnet::graph
