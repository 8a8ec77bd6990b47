#include "causalnet/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "causalnet/errors.hpp"
#include "causalnet/parallel.hpp"
#include "json.hpp"

namespace causalnet::graph {

namespace {

std::string gray_hex(double probability) {
    // Linear gray ramp anchored at 0.7 (light) and 1.0 (black).
    double t = (probability - 0.7) / 0.3;
    t = std::min(1.0, std::max(0.0, t));
    const int level = static_cast<int>(std::lround(204.0 * (1.0 - t)));
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", level, level, level);
    return buf;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

std::string to_string(WindowPolicy p) {
    switch (p) {
        case WindowPolicy::leading: return "leading";
        case WindowPolicy::trailing: return "trailing";
        case WindowPolicy::centered: return "centered";
    }
    return "centered";
}

WindowPolicy window_policy_from_string(const std::string& s) {
    if (s == "leading") return WindowPolicy::leading;
    if (s == "trailing") return WindowPolicy::trailing;
    if (s == "centered") return WindowPolicy::centered;
    throw SchemaError("unknown window policy '" + s + "'");
}

std::optional<std::vector<double>> prepare_input(const gp::RatioSeries& ratio,
                                                 WindowPolicy policy, std::size_t w) {
    const std::size_t T = ratio.values.size();
    if (w == 0 || w > T) throw UsageError("prepare_input: window larger than the series");
    const double n = static_cast<double>(T);
    double mean = 0.0;
    for (double x : ratio.values) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : ratio.values) var += (x - mean) * (x - mean);
    var /= n;
    if (!(var > 1e-12)) return std::nullopt;
    const double inv_sd = 1.0 / std::sqrt(var);
    std::size_t start = 0;
    switch (policy) {
        case WindowPolicy::leading: start = 0; break;
        case WindowPolicy::trailing: start = T - w; break;
        case WindowPolicy::centered: start = (T - w) / 2; break;
    }
    std::vector<double> out(w);
    for (std::size_t i = 0; i < w; ++i) out[i] = (ratio.values[start + i] - mean) * inv_sd;
    return out;
}

std::vector<GeneInput> prepare_gene_inputs(const std::vector<gp::RatioSeries>& ratios,
                                           const std::map<std::string, double>& sd_scores,
                                           const SynthesisConfig& config,
                                           std::vector<std::string>* warnings) {
    std::map<std::string, const gp::RatioSeries*> by_id;
    for (const auto& r : ratios) by_id[r.compound_id] = &r;
    std::vector<GeneInput> out;
    for (const auto& id : config.gene_subset) {
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            if (warnings) warnings->push_back("no ratio series for '" + id + "', skipped");
            continue;
        }
        auto window = prepare_input(*it->second, config.window_policy, config.window);
        if (!window) {
            if (warnings)
                warnings->push_back("zero-variance ratio for '" + id + "', compound excluded");
            continue;
        }
        GeneInput g;
        g.compound_id = id;
        g.window = std::move(*window);
        double mean = 0.0;
        for (double x : it->second->values) mean += x;
        mean /= static_cast<double>(it->second->values.size());
        g.regulation = mean >= 0.0 ? Regulation::up : Regulation::down;
        auto score_it = sd_scores.find(id);
        g.sd_score = score_it == sd_scores.end() ? 0.0 : score_it->second;
        out.push_back(std::move(g));
    }
    return out;
}

CausalGraph synth_undirected(const PairScorer& scorer, const std::vector<GeneInput>& genes,
                             const SynthesisConfig& config, int workers) {
    const std::size_t n = genes.size();
    std::vector<std::pair<std::size_t, std::size_t>> index_pairs;
    index_pairs.reserve(n * (n - 1) / 2);
    // Lexicographic evaluation order over the canonical pair list.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return genes[a].compound_id < genes[b].compound_id;
    });
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) index_pairs.emplace_back(order[i], order[j]);

    std::vector<double> probs(index_pairs.size());
    parallel_for(index_pairs.size(), workers, [&](std::size_t k) {
        const auto& [i, j] = index_pairs[k];
        probs[k] = scorer(genes[i].window, genes[j].window);
    });

    CausalGraph g;
    std::set<std::size_t> connected;
    for (std::size_t k = 0; k < index_pairs.size(); ++k) {
        if (probs[k] < config.probability_cutoff) continue;
        const auto& [i, j] = index_pairs[k];
        UndirectedEdge e;
        e.a = genes[i].compound_id;
        e.b = genes[j].compound_id;
        if (e.b < e.a) std::swap(e.a, e.b);
        e.probability = probs[k];
        g.undirected_edges.push_back(std::move(e));
        connected.insert(i);
        connected.insert(j);
    }
    for (std::size_t i : connected) {
        GraphNode node;
        node.compound_id = genes[i].compound_id;
        node.regulation = genes[i].regulation;
        node.sd_score = genes[i].sd_score;
        g.nodes.push_back(std::move(node));
    }
    std::sort(g.nodes.begin(), g.nodes.end(),
              [](const GraphNode& a, const GraphNode& b) { return a.compound_id < b.compound_id; });
    std::sort(g.undirected_edges.begin(), g.undirected_edges.end(),
              [](const UndirectedEdge& x, const UndirectedEdge& y) {
                  return std::tie(x.a, x.b) < std::tie(y.a, y.b);
              });
    return g;
}

namespace {

// Direction precision for tau from the calibration table; exact match when
// present, otherwise linear interpolation between the nearest thresholds.
double precision_for_threshold(const std::vector<det::LagCalibration>& calibration, double tau,
                               std::vector<std::string>* warnings) {
    std::vector<std::pair<double, double>> known;
    for (const auto& c : calibration)
        if (c.direction_precision) known.emplace_back(c.threshold, *c.direction_precision);
    if (known.empty()) {
        if (warnings) warnings->push_back("no usable calibration entries; precision set to 0.5");
        return 0.5;
    }
    std::sort(known.begin(), known.end());
    for (const auto& [t, p] : known)
        if (t == tau) return p;
    if (warnings)
        warnings->push_back("threshold " + fmt(tau) +
                            " not in calibration table; interpolating from nearest thresholds");
    if (tau <= known.front().first) return known.front().second;
    if (tau >= known.back().first) return known.back().second;
    for (std::size_t i = 0; i + 1 < known.size(); ++i) {
        if (tau >= known[i].first && tau <= known[i + 1].first) {
            const double t = (tau - known[i].first) / (known[i + 1].first - known[i].first);
            return known[i].second + t * (known[i + 1].second - known[i].second);
        }
    }
    return known.back().second;
}

}  // namespace

CausalGraph refine_directed(const CausalGraph& graph, const PairScorer& lag_scorer,
                            const std::vector<GeneInput>& genes, const SynthesisConfig& config,
                            const std::vector<det::LagCalibration>& calibration,
                            std::vector<std::string>* warnings, int workers) {
    std::map<std::string, const GeneInput*> by_id;
    for (const auto& g : genes) by_id[g.compound_id] = &g;
    const double precision = precision_for_threshold(calibration, config.lag_threshold, warnings);

    CausalGraph out;
    out.nodes = graph.nodes;
    std::vector<double> scores(graph.undirected_edges.size());
    parallel_for(graph.undirected_edges.size(), workers, [&](std::size_t k) {
        const auto& e = graph.undirected_edges[k];
        const auto ia = by_id.find(e.a), ib = by_id.find(e.b);
        if (ia == by_id.end() || ib == by_id.end())
            throw UsageError("refine_directed: edge endpoint without prepared input: " + e.a +
                             "--" + e.b);
        scores[k] = lag_scorer(ia->second->window, ib->second->window);
    });
    for (std::size_t k = 0; k < graph.undirected_edges.size(); ++k) {
        const auto& e = graph.undirected_edges[k];
        const double s = scores[k];
        if (s >= config.lag_threshold) {
            out.directed_edges.push_back({e.a, e.b, precision, s, e.probability});
        } else if (s <= -config.lag_threshold) {
            out.directed_edges.push_back({e.b, e.a, precision, -s, e.probability});
        } else {
            out.undirected_edges.push_back(e);
        }
    }
    std::sort(out.directed_edges.begin(), out.directed_edges.end(),
              [](const DirectedEdge& x, const DirectedEdge& y) {
                  return std::tie(x.from, x.to) < std::tie(y.from, y.to);
              });
    return out;
}

std::string graph_to_dot(const CausalGraph& graph) {
    const bool digraph = !graph.directed_edges.empty();
    std::ostringstream os;
    os << (digraph ? "digraph" : "graph") << " causal {\n";
    os << "  node [style=filled];\n";
    for (const auto& n : graph.nodes) {
        os << "  \"" << n.compound_id << "\" [fillcolor="
           << (n.regulation == Regulation::up ? "green" : "red") << "];\n";
    }
    const char* undirected_op = digraph ? " -> " : " -- ";
    for (const auto& e : graph.undirected_edges) {
        os << "  \"" << e.a << "\"" << undirected_op << "\"" << e.b << "\" [color=\""
           << gray_hex(e.probability) << "\"";
        if (digraph) os << ", dir=none";
        os << "];\n";
    }
    for (const auto& e : graph.directed_edges) {
        os << "  \"" << e.from << "\" -> \"" << e.to << "\" [color=\""
           << gray_hex(e.probability) << "\"];\n";
    }
    os << "}\n";
    return os.str();
}

void export_dot(const CausalGraph& graph, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write DOT file: " + path);
    out << graph_to_dot(graph);
}

std::string graph_to_json(const CausalGraph& graph) {
    nlohmann::json j;
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : graph.nodes)
        nodes.push_back({{"compound_id", n.compound_id},
                         {"regulation", n.regulation == Regulation::up ? "up" : "down"},
                         {"sd_score", n.sd_score}});
    j["nodes"] = std::move(nodes);
    nlohmann::json undirected = nlohmann::json::array();
    for (const auto& e : graph.undirected_edges)
        undirected.push_back({{"a", e.a}, {"b", e.b}, {"probability", e.probability}});
    j["undirected_edges"] = std::move(undirected);
    nlohmann::json directed = nlohmann::json::array();
    for (const auto& e : graph.directed_edges)
        directed.push_back({{"from", e.from},
                            {"to", e.to},
                            {"probability", e.probability},
                            {"lag_score", e.lag_score},
                            {"undirected_probability", e.undirected_probability},
                            {"combined_probability", e.probability * e.undirected_probability}});
    j["directed_edges"] = std::move(directed);
    return j.dump(2);
}

void export_json(const CausalGraph& graph, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write graph JSON: " + path);
    out << graph_to_json(graph);
}

CausalGraph graph_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("graph JSON parse error: ") + e.what());
    }
    CausalGraph g;
    for (const auto& nj : j.at("nodes")) {
        GraphNode n;
        n.compound_id = nj.at("compound_id").get<std::string>();
        n.regulation =
            nj.at("regulation").get<std::string>() == "up" ? Regulation::up : Regulation::down;
        n.sd_score = nj.at("sd_score").get<double>();
        g.nodes.push_back(std::move(n));
    }
    for (const auto& ej : j.at("undirected_edges")) {
        UndirectedEdge e;
        e.a = ej.at("a").get<std::string>();
        e.b = ej.at("b").get<std::string>();
        e.probability = ej.at("probability").get<double>();
        g.undirected_edges.push_back(std::move(e));
    }
    for (const auto& ej : j.at("directed_edges")) {
        DirectedEdge e;
        e.from = ej.at("from").get<std::string>();
        e.to = ej.at("to").get<std::string>();
        e.probability = ej.at("probability").get<double>();
        e.lag_score = ej.at("lag_score").get<double>();
        e.undirected_probability = ej.value("undirected_probability", 0.0);
        g.directed_edges.push_back(std::move(e));
    }
    return g;
}

CausalGraph import_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("cannot open graph JSON: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return graph_from_json(ss.str());
}

ReferenceGraph build_correlation_reference(
    const std::vector<std::pair<std::string, std::vector<double>>>& profiles, double threshold,
    std::vector<std::string>* warnings) {
    if (!profiles.empty() && profiles.front().second.size() < 3)
        throw UsageError("build_correlation_reference: need at least 3 signature columns");
    struct Row {
        const std::string* id;
        std::vector<double> centered;
        double norm;
    };
    std::vector<Row> rows;
    for (const auto& [id, values] : profiles) {
        if (!profiles.empty() && values.size() != profiles.front().second.size())
            throw UsageError("build_correlation_reference: ragged profile matrix");
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(values.size());
        Row r;
        r.id = &id;
        r.centered.resize(values.size());
        double ss = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) {
            r.centered[i] = values[i] - mean;
            ss += r.centered[i] * r.centered[i];
        }
        if (!(ss > 1e-24)) {
            if (warnings)
                warnings->push_back("zero-variance profile for '" + id + "', excluded");
            continue;
        }
        r.norm = std::sqrt(ss);
        rows.push_back(std::move(r));
    }
    ReferenceGraph ref;
    for (const auto& r : rows) ref.universe.insert(*r.id);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = i + 1; j < rows.size(); ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < rows[i].centered.size(); ++k)
                dot += rows[i].centered[k] * rows[j].centered[k];
            const double rho = dot / (rows[i].norm * rows[j].norm);
            if (rho >= threshold) {
                auto a = *rows[i].id, b = *rows[j].id;
                if (b < a) std::swap(a, b);
                ref.edges.insert({a, b});
            }
        }
    }
    return ref;
}

ReferenceComparison compare_to_reference(const CausalGraph& graph, const ReferenceGraph& ref) {
    ReferenceComparison out;
    std::set<std::pair<std::string, std::string>> restricted;
    auto consider = [&](std::string a, std::string b) {
        if (b < a) std::swap(a, b);
        if (ref.universe.count(a) && ref.universe.count(b)) restricted.insert({a, b});
    };
    for (const auto& e : graph.undirected_edges) consider(e.a, e.b);
    for (const auto& e : graph.directed_edges) consider(e.from, e.to);
    out.restricted_edges = restricted.size();
    for (const auto& e : restricted)
        if (ref.edges.count(e)) ++out.overlap;
    if (out.restricted_edges > 0)
        out.accuracy =
            static_cast<double>(out.overlap) / static_cast<double>(out.restricted_edges);
    return out;
}

}  // namespace causalnet::graph
