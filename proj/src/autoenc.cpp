#include "causalnet/autoenc.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "causalnet/errors.hpp"
#include "causalnet/parallel.hpp"

namespace causalnet::autoenc {

namespace {

using nn::Tensor;

Tensor stack_series(const std::vector<const std::vector<double>*>& rows) {
    const std::size_t n = rows.size();
    const std::size_t T = rows.empty() ? 0 : rows[0]->size();
    Tensor t({n, T});
    for (std::size_t i = 0; i < n; ++i)
        std::copy(rows[i]->begin(), rows[i]->end(),
                  t.values.begin() + static_cast<std::ptrdiff_t>(i * T));
    return t;
}

double eval_mse(const nn::ModelWeights& net, const std::vector<const std::vector<double>*>& rows) {
    const Tensor batch = stack_series(rows);
    auto fr = nn::forward(net, {batch}, false, 0);
    const auto lr = nn::loss(nn::LossKind::mse, fr.output, batch.values);
    return lr.value;
}

ConvAutoencoder train_one(const std::vector<gp::RatioSeries>& ratios, std::size_t window,
                          std::size_t feature_dim, const TrainSettings& s, std::uint64_t seed) {
    const std::size_t T = ratios.front().values.size();
    std::vector<std::size_t> order(ratios.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng split_rng(derive_seed(seed, 1));
    split_rng.shuffle(order);
    const std::size_t cut = static_cast<std::size_t>(
        std::floor(static_cast<double>(order.size()) * s.split_fraction));
    std::vector<const std::vector<double>*> train, val;
    for (std::size_t i = 0; i < cut; ++i) train.push_back(&ratios[order[i]].values);
    for (std::size_t i = cut; i < order.size(); ++i) val.push_back(&ratios[order[i]].values);
    if (val.empty()) val = train;

    nn::ModelWeights net =
        nn::ModelWeights::init(autoencoder_spec(T, window, feature_dim), derive_seed(seed, 2));
    nn::AdamState adam = nn::AdamState::init(net);

    nn::ModelWeights best = net;
    double best_val = eval_mse(net, val);
    std::size_t since_improvement = 0;
    std::vector<std::size_t> train_order(train.size());

    for (std::size_t epoch = 0; epoch < s.max_epochs; ++epoch) {
        for (std::size_t i = 0; i < train_order.size(); ++i) train_order[i] = i;
        Rng shuffle_rng(derive_seed(seed, 3, epoch));
        shuffle_rng.shuffle(train_order);
        for (std::size_t lo = 0, batch_idx = 0; lo < train.size(); lo += s.batch_size, ++batch_idx) {
            const std::size_t hi = std::min(train.size(), lo + s.batch_size);
            std::vector<const std::vector<double>*> rows;
            for (std::size_t k = lo; k < hi; ++k) rows.push_back(train[train_order[k]]);
            const Tensor batch = stack_series(rows);
            auto fr = nn::forward(net, {batch}, true, derive_seed(seed, 4, epoch, batch_idx));
            const auto lr = nn::loss(nn::LossKind::mse, fr.output, batch.values);
            if (!std::isfinite(lr.value))
                throw FitError("autoencoder training diverged (window " + std::to_string(window) +
                               ", features " + std::to_string(feature_dim) + ")");
            const auto grads = nn::backward(net, *fr.cache, lr.grad);
            nn::adam_step(adam, net, grads);
        }
        const double val_mse = eval_mse(net, val);
        if (val_mse < best_val - s.min_delta) {
            best_val = val_mse;
            best = net;
            since_improvement = 0;
        } else if (++since_improvement >= s.patience) {
            break;
        }
    }
    ConvAutoencoder out;
    out.window = window;
    out.feature_dim = feature_dim;
    out.net = std::move(best);
    out.validation_mse = best_val;
    return out;
}

struct PairTally {
    std::size_t undirected = 0;
    std::size_t forward = 0;   // first gene (canonical smaller) -> second
    std::size_t backward = 0;
};

std::map<std::pair<std::string, std::string>, PairTally> tally_witnesses(
    const std::vector<FeatureOccurrence>& occs, const std::vector<Witness>& witnesses) {
    std::map<std::pair<std::string, std::string>, PairTally> tallies;
    for (const auto& w : witnesses) {
        const auto& oa = occs[w.first];
        const auto& ob = occs[w.second];
        const bool canonical = oa.gene < ob.gene;
        const auto key = canonical ? std::make_pair(oa.gene, ob.gene)
                                   : std::make_pair(ob.gene, oa.gene);
        auto& t = tallies[key];
        if (oa.time_index == ob.time_index) {
            ++t.undirected;
        } else {
            const bool a_first = oa.time_index < ob.time_index;
            // forward counts witnesses directed from the canonical smaller gene.
            if (a_first == canonical) ++t.forward;
            else ++t.backward;
        }
    }
    return tallies;
}

}  // namespace

nn::ModelSpec autoencoder_spec(std::size_t series_length, std::size_t window,
                               std::size_t feature_dim) {
    if (window == 0 || window >= series_length)
        throw UsageError("autoencoder_spec: require 0 < window < series length");
    const std::size_t positions = series_length - window + 1;
    if (positions < 2) throw UsageError("autoencoder_spec: too few conv positions to pool");
    nn::ModelSpec spec;
    spec.layers = {
        nn::LayerSpec::Conv1d(window, 1, feature_dim, true),
        nn::LayerSpec::AvgPool2(),
        nn::LayerSpec::Act(nn::Activation::elu),
        nn::LayerSpec::Upsample(positions),
        nn::LayerSpec::Conv1dTranspose(window, feature_dim, 1, true),
    };
    spec.combiner = nn::Combiner::none;
    spec.branch_depth = spec.layers.size();
    return spec;
}

std::vector<TrainOutcome> train_autoencoders(const std::vector<gp::RatioSeries>& ratios,
                                             const std::vector<std::size_t>& window_sizes,
                                             const std::vector<std::size_t>& feature_dims,
                                             const TrainSettings& settings, std::uint64_t seed,
                                             int workers) {
    if (ratios.size() < 20)
        throw UsageError("train_autoencoders: at least 20 series required, got " +
                         std::to_string(ratios.size()));
    std::vector<std::pair<std::size_t, std::size_t>> grid;
    for (auto w : window_sizes)
        for (auto f : feature_dims) grid.emplace_back(w, f);
    std::vector<TrainOutcome> out(grid.size());
    parallel_for(grid.size(), workers, [&](std::size_t k) {
        const auto [w, f] = grid[k];
        out[k].window = w;
        out[k].feature_dim = f;
        try {
            out[k].model = train_one(ratios, w, f, settings, derive_seed(seed, 10, k));
        } catch (const std::exception& e) {
            out[k].error = e.what();
        }
    });
    return out;
}

std::vector<FeatureOccurrence> extract_occurrences(const ConvAutoencoder& encoder,
                                                   const std::vector<gp::RatioSeries>& ratios) {
    const std::size_t W = encoder.window;
    const std::size_t F = encoder.feature_dim;
    // Pre-pool conv activations of the trained encoder, one F-vector per
    // window position.
    const auto& weight = encoder.net.params.at(0).tensor;  // {W, F}
    const auto& bias = encoder.net.params.at(1).tensor;    // {F}
    std::vector<FeatureOccurrence> out;
    for (const auto& series : ratios) {
        const std::size_t T = series.values.size();
        if (T < W)
            throw UsageError("extract_occurrences: series shorter than the encoder window");
        const std::size_t P = T - W + 1;
        for (std::size_t p = 0; p < P; ++p) {
            FeatureOccurrence occ;
            occ.gene = series.compound_id;
            occ.time_index = p + (W - 1) / 2;
            occ.feature.assign(F, 0.0);
            for (std::size_t f = 0; f < F; ++f) {
                double acc = bias.values[f];
                for (std::size_t k = 0; k < W; ++k)
                    acc += series.values[p + k] * weight.values[k * F + f];
                occ.feature[f] = acc;
            }
            out.push_back(std::move(occ));
        }
    }
    return out;
}

namespace {

std::vector<std::size_t> subsampled_indices(std::size_t n, const MatchSettings& settings) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (n <= settings.occurrence_cap) return idx;
    Rng rng(settings.subsample_seed);
    rng.shuffle(idx);
    idx.resize(settings.occurrence_cap);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace

std::vector<Witness> match_occurrences(const std::vector<FeatureOccurrence>& occurrences,
                                       double distance_threshold,
                                       const MatchSettings& settings) {
    if (!(distance_threshold >= 0.0))
        throw UsageError("match_occurrences: threshold must be nonnegative");
    const auto idx = subsampled_indices(occurrences.size(), settings);
    const double thr2 = distance_threshold * distance_threshold;
    std::vector<Witness> out;
    for (std::size_t a = 0; a < idx.size(); ++a) {
        const auto& oa = occurrences[idx[a]];
        for (std::size_t b = a + 1; b < idx.size(); ++b) {
            const auto& ob = occurrences[idx[b]];
            if (oa.gene == ob.gene) continue;
            double d2 = 0.0;
            for (std::size_t f = 0; f < oa.feature.size(); ++f) {
                const double d = oa.feature[f] - ob.feature[f];
                d2 += d * d;
                if (d2 > thr2) break;
            }
            if (d2 <= thr2) out.push_back({idx[a], idx[b]});
        }
    }
    return out;
}

EdgeSets lift_to_genes(const std::vector<FeatureOccurrence>& occurrences,
                       const std::vector<Witness>& witnesses, std::size_t n) {
    if (n == 0) throw UsageError("lift_to_genes: n must be at least 1");
    const auto tallies = tally_witnesses(occurrences, witnesses);
    EdgeSets out;
    for (const auto& [pair, t] : tallies) {
        const bool undirected = t.undirected >= n;
        const bool fw = t.forward >= n;
        const bool bw = t.backward >= n;
        if (undirected) out.undirected.insert(pair);
        // Conflicting directions and direction-vs-undirected conflicts drop
        // the directed edge.
        if (fw && !bw && !undirected) out.directed.insert(pair);
        if (bw && !fw && !undirected) out.directed.insert({pair.second, pair.first});
    }
    return out;
}

std::size_t count_connected_pairs(const std::vector<FeatureOccurrence>& occurrences,
                                  const std::vector<Witness>& witnesses, std::size_t n) {
    const auto tallies = tally_witnesses(occurrences, witnesses);
    std::size_t count = 0;
    for (const auto& [pair, t] : tallies)
        if (t.undirected >= n || t.forward >= n || t.backward >= n) ++count;
    return count;
}

ThresholdResult solve_threshold(const std::vector<FeatureOccurrence>& occurrences, std::size_t n,
                                std::size_t target_edges, const MatchSettings& settings) {
    if (target_edges == 0) throw UsageError("solve_threshold: target must be at least 1");
    const auto idx = subsampled_indices(occurrences.size(), settings);
    // Candidate cross-gene pairs with their distances, computed once.
    struct Candidate {
        double dist;
        std::size_t a, b;
    };
    std::vector<Candidate> candidates;
    double max_dist = 0.0;
    for (std::size_t a = 0; a < idx.size(); ++a) {
        const auto& oa = occurrences[idx[a]];
        for (std::size_t b = a + 1; b < idx.size(); ++b) {
            const auto& ob = occurrences[idx[b]];
            if (oa.gene == ob.gene) continue;
            double d2 = 0.0;
            for (std::size_t f = 0; f < oa.feature.size(); ++f) {
                const double d = oa.feature[f] - ob.feature[f];
                d2 += d * d;
            }
            const double dist = std::sqrt(d2);
            candidates.push_back({dist, idx[a], idx[b]});
            max_dist = std::max(max_dist, dist);
        }
    }
    auto count_at = [&](double tau) {
        std::vector<Witness> ws;
        for (const auto& c : candidates)
            if (c.dist <= tau) ws.push_back({c.a, c.b});
        return count_connected_pairs(occurrences, ws, n);
    };
    ThresholdResult result;
    if (count_at(max_dist) < target_edges) {
        result.threshold = max_dist;
        result.target_reached = false;
        return result;
    }
    double lo = 0.0, hi = max_dist;
    if (count_at(lo) >= target_edges) {
        result.threshold = 0.0;
        return result;
    }
    for (int iter = 0; iter < 24; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (count_at(mid) >= target_edges) hi = mid;
        else lo = mid;
    }
    result.threshold = hi;
    return result;
}

double witness_consistency(const std::vector<FeatureOccurrence>& occurrences,
                           const std::vector<Witness>& witnesses) {
    if (witnesses.empty()) return 1.0;
    const auto tallies = tally_witnesses(occurrences, witnesses);
    std::size_t conflicting = 0;
    for (const auto& [pair, t] : tallies)
        if (t.forward > 0 && t.backward > 0) conflicting += t.forward + t.backward;
    return 1.0 - static_cast<double>(conflicting) / static_cast<double>(witnesses.size());
}

std::vector<ModelScore> rank_models(std::vector<ModelScore> models) {
    if (models.empty()) throw UsageError("rank_models: at least one model required");
    std::sort(models.begin(), models.end(), [](const ModelScore& a, const ModelScore& b) {
        if (a.consistency != b.consistency) return a.consistency > b.consistency;
        if (a.reconstruction_mse != b.reconstruction_mse)
            return a.reconstruction_mse < b.reconstruction_mse;
        return std::tie(a.window, a.feature_dim, a.n_witnesses) <
               std::tie(b.window, b.feature_dim, b.n_witnesses);
    });
    std::map<std::size_t, std::size_t> per_window;
    for (std::size_t i = 0; i < models.size(); ++i) {
        models[i].rank = i + 1;
        models[i].generate = ++per_window[models[i].window] <= 3;
    }
    return models;
}

}  // namespace causalnet::autoenc
