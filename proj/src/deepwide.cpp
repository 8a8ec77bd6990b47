#include "causalnet/deepwide.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "causalnet/errors.hpp"

namespace causalnet::deepwide {

namespace {

using nn::Tensor;

Tensor stack_rows(const std::vector<const std::vector<double>*>& rows) {
    const std::size_t n = rows.size();
    const std::size_t d = rows.empty() ? 0 : rows[0]->size();
    Tensor t({n, d});
    for (std::size_t i = 0; i < n; ++i)
        std::copy(rows[i]->begin(), rows[i]->end(),
                  t.values.begin() + static_cast<std::ptrdiff_t>(i * d));
    return t;
}

double eval_model_mse(const nn::ModelWeights& net, const ChangeDataset& data, bool train_split) {
    const std::size_t lo = train_split ? 0 : data.train_count;
    const std::size_t hi = train_split ? data.train_count : data.inputs.size();
    if (hi == lo) return 0.0;
    std::vector<const std::vector<double>*> in;
    std::vector<double> labels;
    for (std::size_t s = lo; s < hi; ++s) {
        in.push_back(&data.inputs[s]);
        labels.insert(labels.end(), data.targets[s].begin(), data.targets[s].end());
    }
    auto fr = nn::forward(net, {stack_rows(in)}, false, 0);
    return nn::loss(nn::LossKind::mse, fr.output, labels).value;
}

void train_epochs(nn::ModelWeights& net, nn::AdamState& adam, const ChangeDataset& data,
                  std::size_t epochs, std::size_t batch_size, std::uint64_t seed,
                  std::size_t epoch_offset) {
    std::vector<std::size_t> order(data.train_count);
    for (std::size_t e = 0; e < epochs; ++e) {
        const std::size_t epoch = epoch_offset + e;
        // The permutation is a function of (seed, epoch) alone so a resumed
        // run shuffles identically to a continuous one.
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(derive_seed(seed, 40, epoch));
        shuffle_rng.shuffle(order);
        for (std::size_t lo = 0, batch_idx = 0; lo < order.size(); lo += batch_size, ++batch_idx) {
            const std::size_t hi = std::min(order.size(), lo + batch_size);
            std::vector<const std::vector<double>*> in;
            std::vector<double> labels;
            for (std::size_t k = lo; k < hi; ++k) {
                in.push_back(&data.inputs[order[k]]);
                labels.insert(labels.end(), data.targets[order[k]].begin(),
                              data.targets[order[k]].end());
            }
            auto fr = nn::forward(net, {stack_rows(in)}, true,
                                  derive_seed(seed, 41, epoch, batch_idx));
            const auto lr = nn::loss(nn::LossKind::mse, fr.output, labels);
            if (!std::isfinite(lr.value))
                throw TrainingError("deep-wide training diverged (non-finite loss)", 0);
            const auto grads = nn::backward(net, *fr.cache, lr.grad);
            nn::adam_step(adam, net, grads);
        }
    }
}

RelativeMSEReport make_report(const nn::ModelWeights& net, std::size_t depth, std::size_t width,
                              const ChangeDataset& data) {
    RelativeMSEReport r;
    r.depth = depth;
    r.width = width;
    r.parameter_count = net.total_parameters();
    r.train_mse = eval_model_mse(net, data, true);
    r.test_mse = eval_model_mse(net, data, false);
    r.persistence_train_mse = persistence_mse(data, true);
    r.persistence_test_mse = persistence_mse(data, false);
    if (r.persistence_train_mse > 0.0)
        r.relative_train_mse = r.train_mse / r.persistence_train_mse;
    if (r.persistence_test_mse > 0.0) r.relative_test_mse = r.test_mse / r.persistence_test_mse;
    return r;
}

}  // namespace

nn::ModelSpec deepwide_spec(std::size_t gene_count, std::size_t depth, std::size_t width,
                            double l1, double dropout) {
    if (depth < 2) throw UsageError("deepwide_spec: depth must be at least 2");
    if (width == 0 || gene_count == 0)
        throw UsageError("deepwide_spec: width and gene count must be positive");
    nn::ModelSpec spec;
    for (std::size_t d = 0; d < depth; ++d) {
        const std::size_t in = d == 0 ? gene_count : width;
        const std::size_t out = d + 1 == depth ? gene_count : width;
        spec.layers.push_back(nn::LayerSpec::Dense(in, out, false, l1));
        spec.layers.push_back(nn::LayerSpec::Dropout(dropout));
        spec.layers.push_back(nn::LayerSpec::Act(nn::Activation::elu));
    }
    spec.combiner = nn::Combiner::none;
    spec.branch_depth = spec.layers.size();
    return spec;
}

ChangeDataset build_change_dataset(const std::vector<gp::RatioSeries>& ratios,
                                   double train_fraction) {
    if (ratios.empty()) throw UsageError("build_change_dataset: empty ratio set");
    const std::size_t T = ratios.front().values.size();
    if (T < 3) throw UsageError("build_change_dataset: need at least 3 grid points");
    for (const auto& r : ratios)
        if (r.values.size() != T)
            throw UsageError("build_change_dataset: ratio series lengths differ");
    ChangeDataset data;
    data.gene_count = ratios.size();
    for (const auto& r : ratios) data.gene_ids.push_back(r.compound_id);
    // delta_i spans t_{i-1} -> t_i for i in [1, T); samples pair delta_i with
    // delta_{i+1}.
    const std::size_t n_deltas = T - 1;
    std::vector<std::vector<double>> deltas(n_deltas, std::vector<double>(data.gene_count));
    for (std::size_t g = 0; g < ratios.size(); ++g)
        for (std::size_t i = 1; i < T; ++i)
            deltas[i - 1][g] = ratios[g].values[i] - ratios[g].values[i - 1];
    for (std::size_t i = 0; i + 1 < n_deltas; ++i) {
        data.inputs.push_back(deltas[i]);
        data.targets.push_back(deltas[i + 1]);
    }
    data.train_count = static_cast<std::size_t>(
        std::floor(static_cast<double>(data.inputs.size()) * train_fraction));
    return data;
}

double persistence_mse(const ChangeDataset& data, bool train_split) {
    const std::size_t lo = train_split ? 0 : data.train_count;
    const std::size_t hi = train_split ? data.train_count : data.inputs.size();
    if (hi == lo) return 0.0;
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t s = lo; s < hi; ++s) {
        for (std::size_t g = 0; g < data.gene_count; ++g) {
            const double d = data.targets[s][g] - data.inputs[s][g];
            total += d * d;
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

TrainedDeepWide train_deepwide(std::size_t depth, std::size_t width, const ChangeDataset& data,
                               std::size_t epochs, std::size_t batch_size, std::uint64_t seed,
                               std::size_t epoch_offset) {
    if (data.train_count == 0) throw UsageError("train_deepwide: empty training split");
    TrainedDeepWide out;
    out.net = nn::ModelWeights::init(deepwide_spec(data.gene_count, depth, width),
                                     derive_seed(seed, 39));
    nn::AdamState adam = nn::AdamState::init(out.net);
    train_epochs(out.net, adam, data, epochs, batch_size, seed, epoch_offset);
    out.report = make_report(out.net, depth, width, data);
    return out;
}

TrainedDeepWide pretrain_then_finetune(std::size_t depth, std::size_t width,
                                       const std::vector<const ChangeDataset*>& all_datasets,
                                       const ChangeDataset& target, std::size_t pretrain_epochs,
                                       std::size_t finetune_epochs, std::size_t batch_size,
                                       std::uint64_t seed) {
    if (all_datasets.empty()) throw UsageError("pretrain_then_finetune: no datasets");
    for (const auto* d : all_datasets)
        if (d->gene_count != target.gene_count)
            throw UsageError("pretrain_then_finetune: gene dimensions differ across datasets");
    // Union of the training splits, concatenated in the given order.
    ChangeDataset unions;
    unions.gene_count = target.gene_count;
    unions.gene_ids = target.gene_ids;
    for (const auto* d : all_datasets) {
        for (std::size_t s = 0; s < d->train_count; ++s) {
            unions.inputs.push_back(d->inputs[s]);
            unions.targets.push_back(d->targets[s]);
        }
    }
    unions.train_count = unions.inputs.size();

    TrainedDeepWide out;
    out.net = nn::ModelWeights::init(deepwide_spec(target.gene_count, depth, width),
                                     derive_seed(seed, 39));
    nn::AdamState adam = nn::AdamState::init(out.net);
    train_epochs(out.net, adam, unions, pretrain_epochs, batch_size, seed, 0);
    train_epochs(out.net, adam, target, finetune_epochs, batch_size, seed, pretrain_epochs);
    out.report = make_report(out.net, depth, width, target);
    return out;
}

UnitGraph extract_graph(const nn::ModelWeights& net, const std::vector<std::string>& gene_ids,
                        const ExtractionConfig& config) {
    if (config.max_degree == 0) throw UsageError("extract_graph: max_degree must be positive");
    // Collect the dense blocks in order.
    struct LayerRef {
        const nn::LayerSpec* spec;
        const nn::Tensor* weight;
    };
    std::vector<LayerRef> dense_layers;
    {
        std::size_t cursor = 0;
        for (const auto& l : net.spec.layers) {
            const bool has_params = l.kind == nn::LayerKind::dense ||
                                    l.kind == nn::LayerKind::conv1d ||
                                    l.kind == nn::LayerKind::conv1d_transpose;
            if (l.kind == nn::LayerKind::dense)
                dense_layers.push_back({&l, &net.params[cursor].tensor});
            if (has_params) cursor += l.has_bias ? 2 : 1;
        }
    }
    const std::size_t depth = dense_layers.size();
    if (depth == 0) throw UsageError("extract_graph: network has no dense layers");
    if (gene_ids.size() != dense_layers.front().spec->in_dim)
        throw UsageError("extract_graph: gene id count does not match the network input size");

    auto unit_name = [&](std::size_t layer, std::size_t index) -> std::string {
        if (layer == 0 || layer == depth) return gene_ids[index];
        return "L" + std::to_string(layer) + "_U" + std::to_string(index);
    };

    struct RawEdge {
        std::size_t src, dst;
        double weight;
    };
    std::vector<UnitEdge> kept;
    for (std::size_t layer = 0; layer < depth; ++layer) {
        const auto& spec = *dense_layers[layer].spec;
        const auto& w = *dense_layers[layer].weight;
        std::vector<RawEdge> positives;
        for (std::size_t i = 0; i < spec.in_dim; ++i)
            for (std::size_t j = 0; j < spec.out_dim; ++j) {
                const double v = w.values[i * spec.out_dim + j];
                if (v > 0.0) positives.push_back({i, j, v});
            }
        // Sparsity constraint: smallest weight threshold with at most
        // ceil(sqrt(2 * possible)) surviving edges.
        const double possible = static_cast<double>(spec.in_dim * spec.out_dim);
        const std::size_t cap =
            static_cast<std::size_t>(std::ceil(std::sqrt(2.0 * possible)));
        std::sort(positives.begin(), positives.end(), [](const RawEdge& a, const RawEdge& b) {
            if (a.weight != b.weight) return a.weight > b.weight;
            return std::tie(a.src, a.dst) < std::tie(b.src, b.dst);
        });
        std::size_t keep_count = std::min(cap, positives.size());
        // Ties straddling the cap raise the threshold past the whole tied run.
        while (keep_count > 0 && keep_count < positives.size() &&
               positives[keep_count].weight == positives[keep_count - 1].weight) {
            const double tied = positives[keep_count - 1].weight;
            while (keep_count > 0 && positives[keep_count - 1].weight == tied) --keep_count;
        }
        positives.resize(keep_count);

        // Degree pruning, lowest weight first within the layer.
        std::sort(positives.begin(), positives.end(), [](const RawEdge& a, const RawEdge& b) {
            if (a.weight != b.weight) return a.weight < b.weight;
            return std::tie(a.src, a.dst) < std::tie(b.src, b.dst);
        });
        std::vector<std::size_t> out_deg(spec.in_dim, 0), in_deg(spec.out_dim, 0);
        for (const auto& e : positives) {
            ++out_deg[e.src];
            ++in_deg[e.dst];
        }
        std::vector<bool> removed(positives.size(), false);
        for (std::size_t k = 0; k < positives.size(); ++k) {
            const auto& e = positives[k];
            if (out_deg[e.src] > config.max_degree || in_deg[e.dst] > config.max_degree) {
                removed[k] = true;
                --out_deg[e.src];
                --in_deg[e.dst];
            }
        }
        for (std::size_t k = 0; k < positives.size(); ++k) {
            if (removed[k]) continue;
            kept.push_back({unit_name(layer, positives[k].src),
                            unit_name(layer + 1, positives[k].dst), positives[k].weight, layer});
        }
    }

    // Restrict gene nodes to the subset's top max_genes entries.
    std::set<std::string> allowed_genes;
    for (const auto& id : config.gene_subset) {
        if (allowed_genes.size() >= config.max_genes) break;
        allowed_genes.insert(id);
    }
    std::set<std::string> gene_universe(gene_ids.begin(), gene_ids.end());
    auto is_gene = [&](const std::string& name) { return gene_universe.count(name) > 0; };
    std::vector<UnitEdge> restricted;
    for (auto& e : kept) {
        if (is_gene(e.from) && !allowed_genes.count(e.from)) continue;
        if (is_gene(e.to) && !allowed_genes.count(e.to)) continue;
        restricted.push_back(std::move(e));
    }

    UnitGraph g;
    std::set<std::string> used;
    for (const auto& e : restricted) {
        used.insert(e.from);
        used.insert(e.to);
    }
    for (const auto& name : used) {
        if (is_gene(name)) g.gene_nodes.push_back(name);
        else g.hidden_nodes.push_back(name);
    }
    std::sort(restricted.begin(), restricted.end(), [](const UnitEdge& a, const UnitEdge& b) {
        return std::tie(a.layer, a.from, a.to) < std::tie(b.layer, b.from, b.to);
    });
    g.edges = std::move(restricted);
    return g;
}

graph::CausalGraph to_causal_graph(const UnitGraph& units,
                                   const std::map<std::string, graph::Regulation>& regulation) {
    graph::CausalGraph g;
    for (const auto& name : units.gene_nodes) {
        graph::GraphNode n;
        n.compound_id = name;
        auto it = regulation.find(name);
        n.regulation = it == regulation.end() ? graph::Regulation::up : it->second;
        g.nodes.push_back(std::move(n));
    }
    for (const auto& name : units.hidden_nodes) {
        graph::GraphNode n;
        n.compound_id = name;
        n.regulation = graph::Regulation::up;
        g.nodes.push_back(std::move(n));
    }
    std::sort(g.nodes.begin(), g.nodes.end(),
              [](const graph::GraphNode& a, const graph::GraphNode& b) {
                  return a.compound_id < b.compound_id;
              });
    for (const auto& e : units.edges) {
        graph::DirectedEdge de;
        de.from = e.from;
        de.to = e.to;
        de.probability = 1.0;  // evidence-based, rendered solid
        de.lag_score = e.weight;
        g.directed_edges.push_back(std::move(de));
    }
    return g;
}

std::vector<RelativeMSEReport> rank_deepwide_models(std::vector<RelativeMSEReport> reports) {
    if (reports.empty()) throw UsageError("rank_deepwide_models: at least one report required");
    std::sort(reports.begin(), reports.end(),
              [](const RelativeMSEReport& a, const RelativeMSEReport& b) {
                  const bool ha = a.relative_test_mse.has_value();
                  const bool hb = b.relative_test_mse.has_value();
                  if (ha != hb) return ha;  // absent relative MSE sorts last
                  if (ha && hb && *a.relative_test_mse != *b.relative_test_mse)
                      return *a.relative_test_mse < *b.relative_test_mse;
                  if (a.parameter_count != b.parameter_count)
                      return a.parameter_count < b.parameter_count;
                  return std::tie(a.depth, a.width) < std::tie(b.depth, b.width);
              });
    for (std::size_t i = 0; i < reports.size(); ++i) reports[i].generate = i < 10;
    return reports;
}

}  // namespace causalnet::deepwide
