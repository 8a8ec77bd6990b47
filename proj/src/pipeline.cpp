#include "causalnet/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "causalnet/autoenc.hpp"
#include "causalnet/data_model.hpp"
#include "causalnet/deepwide.hpp"
#include "causalnet/detectors.hpp"
#include "causalnet/errors.hpp"
#include "causalnet/gp.hpp"
#include "causalnet/graph.hpp"
#include "causalnet/parallel.hpp"
#include "json.hpp"

namespace causalnet::pipeline {

namespace fs = std::filesystem;
using cli::RunConfig;

namespace {

std::string join(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

void ensure_output_dir(const RunConfig& cfg) { fs::create_directories(cfg.output_dir); }

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_ranking_csv(const std::string& path, const std::map<std::string, double>& scores) {
    const auto order = gp::rank_compounds(scores, scores.size());
    std::ofstream out(path);
    if (!out) throw FitError("cannot write ranking: " + path);
    out << "compound_id,score\n";
    for (const auto& id : order) out << id << ',' << fmt17(scores.at(id)) << "\n";
}

std::map<std::string, double> read_ranking_csv(const std::string& path,
                                               std::vector<std::string>* order = nullptr) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("cannot open ranking: " + path);
    std::map<std::string, double> scores;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            header = false;
            continue;
        }
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ParseError("malformed ranking row: " + line);
        const std::string id = line.substr(0, comma);
        scores[id] = std::stod(line.substr(comma + 1));
        if (order) order->push_back(id);
    }
    return scores;
}

struct FittedSet {
    std::vector<gp::GPSummary> summaries;
    std::vector<gp::RatioSeries> ratios;
    std::map<std::string, double> scores_k1, scores_k2;
};

nlohmann::json model_record(const std::string& compound, Condition cond,
                            const gp::GPModel& model) {
    nlohmann::json j;
    j["compound_id"] = compound;
    j["condition"] = to_string(cond);
    j["signal_variance"] = model.params().signal_variance;
    j["length_scale"] = model.params().length_scale;
    j["noise_variance"] = model.params().noise_variance;
    j["inputs"] = model.train_inputs();
    // Store raw targets; the per-compound center is recomputed on load.
    std::vector<double> raw = model.train_targets();
    for (auto& v : raw) v += model.mean_offset();
    j["targets"] = raw;
    return j;
}

}  // namespace

synth::GenePool load_gene_pool(const std::string& models_path, double* t_max_hours) {
    std::ifstream in(models_path);
    if (!in) throw MissingArtifactError("cannot open GP models: " + models_path);
    nlohmann::json j;
    in >> j;
    const double t_max = j.at("t_max_hours").get<double>();
    if (t_max_hours) *t_max_hours = t_max;
    const TimeGrid grid = TimeGrid::uniform(t_max);

    struct Entry {
        std::optional<gp::GPModel> treated, control;
    };
    std::map<std::string, Entry> by_gene;
    for (const auto& mj : j.at("models")) {
        gp::KernelParams p;
        p.signal_variance = mj.at("signal_variance").get<double>();
        p.length_scale = mj.at("length_scale").get<double>();
        p.noise_variance = mj.at("noise_variance").get<double>();
        auto inputs = mj.at("inputs").get<std::vector<double>>();
        auto targets = mj.at("targets").get<std::vector<double>>();
        double offset = 0.0;
        for (double v : targets) offset += v;
        offset /= static_cast<double>(targets.size());
        for (auto& v : targets) v -= offset;
        gp::GPModel model(p, std::move(inputs), std::move(targets), offset);
        auto& entry = by_gene[mj.at("compound_id").get<std::string>()];
        if (condition_from_string(mj.at("condition").get<std::string>()) == Condition::treated)
            entry.treated = std::move(model);
        else
            entry.control = std::move(model);
    }
    synth::GenePool pool;
    for (const auto& [gene, entry] : by_gene) {
        if (!entry.treated || !entry.control) continue;
        pool.push_back({gene, gp::PosteriorSampler(*entry.treated, grid),
                        gp::PosteriorSampler(*entry.control, grid)});
    }
    if (pool.empty())
        throw MissingArtifactError("GP models file has no gene with both conditions: " +
                                   models_path);
    return pool;
}

void cmd_gp_fit(const RunConfig& cfg, std::ostream& log) {
    if (cfg.input_csv.empty()) throw SchemaError("paths.input_csv is not configured");
    const auto observations = load_observations(cfg.input_csv);
    auto groups = group_by_compound(observations);
    const TimeGrid grid = TimeGrid::uniform(cfg.t_max_hours);

    std::vector<SeriesKey> keys;
    for (const auto& [key, series] : groups) {
        if (series.observations.size() < 2) {
            log << "warning: group (" << key.first << ", " << to_string(key.second)
                << ") has fewer than 2 observations; excluded from GP fitting\n";
            continue;
        }
        keys.push_back(key);
    }
    if (keys.empty()) throw SchemaError("no fittable groups in " + cfg.input_csv);

    double signal = 0.0;
    if (cfg.signal_variance) {
        signal = *cfg.signal_variance;
    } else {
        // Shared signal variance: per-compound joint MLE on a subsample, then
        // the mean of the optima.
        const std::size_t n_sub = std::min(cfg.signal_subsample, keys.size());
        std::vector<double> optima(n_sub);
        parallel_for(n_sub, cfg.workers, [&](std::size_t i) {
            optima[i] = gp::fit_signal_noise_mle(groups.at(keys[i]), cfg.length_scale)
                            .signal_variance;
        });
        for (double v : optima) signal += v;
        signal /= static_cast<double>(n_sub);
        log << "calibrated signal variance " << signal << " from " << n_sub << " compounds\n";
    }

    std::vector<gp::GPSummary> summaries(keys.size());
    nlohmann::json models_json = nlohmann::json::array();
    std::vector<nlohmann::json> model_records(keys.size());
    parallel_for(keys.size(), cfg.workers, [&](std::size_t i) {
        const auto& series = groups.at(keys[i]);
        const gp::GPModel model = gp::fit_gp(series, signal, cfg.length_scale);
        gp::GPSummary s = gp::posterior(model, grid);
        s.compound_id = keys[i].first;
        s.condition = keys[i].second;
        summaries[i] = std::move(s);
        model_records[i] = model_record(keys[i].first, keys[i].second, model);
    });
    for (auto& r : model_records) models_json.push_back(std::move(r));

    // Ratios and SD-band scores for compounds observed under both conditions.
    std::map<std::string, const gp::GPSummary*> treated, control;
    for (const auto& s : summaries)
        (s.condition == Condition::treated ? treated : control)[s.compound_id] = &s;
    FittedSet fitted;
    fitted.summaries = summaries;
    for (const auto& [gene, ts] : treated) {
        auto it = control.find(gene);
        if (it == control.end()) {
            log << "warning: compound " << gene << " lacks a control series; no ratio\n";
            continue;
        }
        fitted.ratios.push_back(gp::log_ratio(*ts, *it->second));
        fitted.scores_k1[gene] = gp::sd_band_score(*ts, *it->second, grid, 1.0);
        fitted.scores_k2[gene] = gp::sd_band_score(*ts, *it->second, grid, 2.0);
    }

    ensure_output_dir(cfg);
    gp::save_summaries(join(cfg.output_dir, "gp_summaries.json"), fitted.summaries);
    gp::save_ratios(join(cfg.output_dir, "ratios.json"), fitted.ratios);
    nlohmann::json models_file;
    models_file["t_max_hours"] = cfg.t_max_hours;
    models_file["signal_variance"] = signal;
    models_file["models"] = std::move(models_json);
    std::ofstream mout(join(cfg.output_dir, "gp_models.json"));
    mout << models_file.dump();
    write_ranking_csv(join(cfg.output_dir, "ranking_k1.csv"), fitted.scores_k1);
    write_ranking_csv(join(cfg.output_dir, "ranking_k2.csv"), fitted.scores_k2);
    log << "fitted " << keys.size() << " GP models; " << fitted.ratios.size()
        << " ratio series\n";
}

void cmd_rank(const RunConfig& cfg, std::ostream& log) {
    const auto summaries = gp::load_summaries(join(cfg.output_dir, "gp_summaries.json"));
    const TimeGrid grid = TimeGrid::uniform(cfg.t_max_hours);
    std::map<std::string, const gp::GPSummary*> treated, control;
    for (const auto& s : summaries)
        (s.condition == Condition::treated ? treated : control)[s.compound_id] = &s;
    std::map<std::string, double> k1, k2;
    for (const auto& [gene, ts] : treated) {
        auto it = control.find(gene);
        if (it == control.end()) continue;
        k1[gene] = gp::sd_band_score(*ts, *it->second, grid, 1.0);
        k2[gene] = gp::sd_band_score(*ts, *it->second, grid, 2.0);
    }
    ensure_output_dir(cfg);
    write_ranking_csv(join(cfg.output_dir, "ranking_k1.csv"), k1);
    write_ranking_csv(join(cfg.output_dir, "ranking_k2.csv"), k2);
    log << "ranked " << k1.size() << " compounds\n";
}

namespace {

synth::SynthConfig synth_config_from(const RunConfig& cfg, std::uint64_t seed) {
    synth::SynthConfig sc;
    sc.series_length = TimeGrid::kSize;
    sc.window = cfg.window;
    sc.mixin = cfg.mixin;
    sc.mode = cfg.mode;
    sc.set_size = cfg.set_size;
    sc.split_fraction = cfg.split_fraction;
    sc.seed = seed;
    return sc;
}

nlohmann::json synth_sidecar(const synth::SynthConfig& sc) {
    nlohmann::json j;
    j["series_length"] = sc.series_length;
    j["window"] = sc.window;
    j["max_lag"] = sc.max_lag();
    j["mixin"] = sc.mixin;
    j["mode"] = synth::to_string(sc.mode);
    j["set_size"] = sc.set_size;
    j["split_fraction"] = sc.split_fraction;
    j["seed"] = sc.seed;
    return j;
}

}  // namespace

void cmd_synth_data(const RunConfig& cfg, std::ostream& log) {
    const std::uint64_t seed = cfg.require_seed("synth-data");
    const auto pool = load_gene_pool(join(cfg.output_dir, "gp_models.json"));
    const synth::SynthConfig sc = synth_config_from(cfg, seed);
    const auto labeled = synth::build_labeled_set(sc, pool, cfg.workers);
    const auto lags = synth::build_lag_set(sc, pool, cfg.workers);
    ensure_output_dir(cfg);
    synth::save_labeled_set(join(cfg.output_dir, "labeled_pairs_train.json"), labeled.train);
    synth::save_labeled_set(join(cfg.output_dir, "labeled_pairs_test.json"), labeled.test);
    synth::save_lag_set(join(cfg.output_dir, "lag_pairs_train.json"), lags.train);
    synth::save_lag_set(join(cfg.output_dir, "lag_pairs_test.json"), lags.test);
    std::ofstream side(join(cfg.output_dir, "synth_config.json"));
    side << synth_sidecar(sc).dump(2);
    log << "synthetic sets: " << labeled.train.pairs.size() << "/" << labeled.test.pairs.size()
        << " labeled train/test, " << lags.train.pairs.size() << "/" << lags.test.pairs.size()
        << " lag train/test\n";
}

void cmd_train(const RunConfig& cfg, const std::string& which, std::ostream& log) {
    const std::uint64_t seed = cfg.require_seed("train " + which);
    const auto pool = load_gene_pool(join(cfg.output_dir, "gp_models.json"));
    det::CurriculumSchedule schedule;
    schedule.stages = cfg.stages;
    schedule.epochs_per_stage = cfg.epochs_per_stage;
    schedule.batch_size = cfg.batch_size;
    const synth::SynthConfig sc = synth_config_from(cfg, seed);
    ensure_output_dir(cfg);
    if (which == "causality") {
        const auto result = det::train_causality(schedule, sc, pool, seed, cfg.workers);
        nn::save_model(result.model, join(cfg.output_dir, "model_causality.json"));
        std::ofstream rep(join(cfg.output_dir, "report_causality.json"));
        rep << det::causality_reports_to_json(result.reports);
        log << "trained causality detector; final stage accuracy "
            << result.reports.back().validation.accuracy << "\n";
    } else if (which == "lag") {
        const auto result = det::train_lag(schedule, sc, pool, seed, cfg.workers);
        nn::save_model(result.model, join(cfg.output_dir, "model_lag.json"));
        std::ofstream rep(join(cfg.output_dir, "report_lag.json"));
        rep << det::lag_reports_to_json(result.reports);
        // Calibration table on a fresh held-out lag set.
        synth::SynthConfig calib_cfg = sc;
        calib_cfg.seed = derive_seed(seed, 90);
        const auto calib_set = synth::build_lag_set(calib_cfg, pool, cfg.workers);
        const auto calib = det::calibrate_lag_threshold(result.model, calib_set.test,
                                                        cfg.calibration_thresholds);
        std::ofstream cal(join(cfg.output_dir, "calibration_lag.json"));
        cal << det::calibration_to_json(calib);
        log << "trained lag detector; final stage mean |error| "
            << result.reports.back().mean_abs_error << "\n";
    } else {
        throw UsageError("train: expected 'causality' or 'lag', got '" + which + "'");
    }
}

void cmd_validate(const RunConfig& cfg, const std::string& which, std::ostream& log) {
    const std::uint64_t seed = cfg.require_seed("validate " + which);
    const auto pool = load_gene_pool(join(cfg.output_dir, "gp_models.json"));
    synth::SynthConfig sc = synth_config_from(cfg, derive_seed(seed, 91));
    ensure_output_dir(cfg);
    if (which == "causality") {
        const auto model = nn::load_model(join(cfg.output_dir, "model_causality.json"));
        const auto split = synth::build_labeled_set(sc, pool, cfg.workers);
        const auto report = det::roc_auc(model, split.test);
        nlohmann::json j;
        j["m"] = sc.mixin;
        j["mode"] = synth::to_string(sc.mode);
        j["accuracy"] = report.accuracy;
        j["auc"] = report.auc;
        nlohmann::json roc = nlohmann::json::array();
        for (const auto& [fpr, tpr] : report.roc) roc.push_back({fpr, tpr});
        j["roc"] = std::move(roc);
        std::ofstream out(join(cfg.output_dir, "validation_causality.json"));
        out << j.dump(2);
        log << "validation accuracy " << report.accuracy << ", AUC " << report.auc << "\n";
    } else if (which == "lag") {
        const auto model = nn::load_model(join(cfg.output_dir, "model_lag.json"));
        const auto split = synth::build_lag_set(sc, pool, cfg.workers);
        const auto calib =
            det::calibrate_lag_threshold(model, split.test, cfg.calibration_thresholds);
        std::ofstream out(join(cfg.output_dir, "validation_lag.json"));
        out << det::calibration_to_json(calib);
        log << "lag calibration written for " << calib.size() << " thresholds\n";
    } else {
        throw UsageError("validate: expected 'causality' or 'lag', got '" + which + "'");
    }
}

namespace {

std::vector<std::string> top_subset(const std::string& ranking_path, std::size_t top_n) {
    std::vector<std::string> order;
    read_ranking_csv(ranking_path, &order);
    if (order.size() > top_n) order.resize(top_n);
    return order;
}

std::map<std::string, graph::Regulation> regulation_from_ratios(
    const std::vector<gp::RatioSeries>& ratios) {
    std::map<std::string, graph::Regulation> out;
    for (const auto& r : ratios) {
        double mean = 0.0;
        for (double v : r.values) mean += v;
        out[r.compound_id] =
            mean >= 0.0 ? graph::Regulation::up : graph::Regulation::down;
    }
    return out;
}

void write_metadata(const RunConfig& cfg, const std::string& method, const std::string& path) {
    nlohmann::json j;
    j["method"] = method;
    j["graph.probability_cutoff"] = cfg.probability_cutoff;
    j["graph.lag_threshold"] = cfg.lag_threshold;
    j["graph.top_n"] = cfg.top_n;
    j["graph.rank_k"] = cfg.rank_k;
    j["graph.window_policy"] = graph::to_string(cfg.window_policy);
    j["graph.directed"] = cfg.directed;
    j["synth.window"] = cfg.window;
    j["synth.mixin"] = cfg.mixin;
    j["synth.mode"] = synth::to_string(cfg.mode);
    if (cfg.seed) j["run.seed"] = *cfg.seed;
    j["run.scale"] = cli::to_string(cfg.scale);
    std::ofstream out(path);
    out << j.dump(2);
}

void graph_probabilistic(const RunConfig& cfg, std::ostream& log) {
    const auto ratios = gp::load_ratios(join(cfg.output_dir, "ratios.json"));
    const std::string ranking_path =
        join(cfg.output_dir, "ranking_k" + std::to_string(cfg.rank_k) + ".csv");
    const auto sd_scores = read_ranking_csv(ranking_path);
    const auto model = nn::load_model(join(cfg.output_dir, "model_causality.json"));

    graph::SynthesisConfig gcfg;
    gcfg.gene_subset = top_subset(ranking_path, cfg.top_n);
    gcfg.probability_cutoff = cfg.probability_cutoff;
    gcfg.lag_threshold = cfg.lag_threshold;
    gcfg.window_policy = cfg.window_policy;
    gcfg.window = cfg.window;

    std::vector<std::string> warnings;
    const auto genes = graph::prepare_gene_inputs(ratios, sd_scores, gcfg, &warnings);
    for (const auto& w : warnings) log << "warning: " << w << "\n";

    const graph::PairScorer scorer = [&](const std::vector<double>& a,
                                         const std::vector<double>& b) {
        return det::predict_causality(model, a, b);
    };
    graph::CausalGraph g = graph::synth_undirected(scorer, genes, gcfg, cfg.workers);
    log << "undirected graph: " << g.nodes.size() << " nodes, " << g.undirected_edges.size()
        << " edges\n";

    if (cfg.directed) {
        const auto lag_model = nn::load_model(join(cfg.output_dir, "model_lag.json"));
        std::ifstream cal_in(join(cfg.output_dir, "calibration_lag.json"));
        if (!cal_in)
            throw MissingArtifactError("cannot open calibration table: " +
                                       join(cfg.output_dir, "calibration_lag.json"));
        std::stringstream ss;
        ss << cal_in.rdbuf();
        const auto calibration = det::calibration_from_json(ss.str());
        const graph::PairScorer lag_scorer = [&](const std::vector<double>& a,
                                                 const std::vector<double>& b) {
            return det::predict_lag(lag_model, a, b);
        };
        std::vector<std::string> dir_warnings;
        g = graph::refine_directed(g, lag_scorer, genes, gcfg, calibration, &dir_warnings,
                                   cfg.workers);
        for (const auto& w : dir_warnings) log << "warning: " << w << "\n";
        log << "directed refinement: " << g.directed_edges.size() << " directed, "
            << g.undirected_edges.size() << " undirected\n";
    }

    std::ostringstream tag;
    tag << "graph_prob_top" << cfg.top_n << "_cut" << cfg.probability_cutoff;
    graph::export_dot(g, join(cfg.output_dir, tag.str() + ".dot"));
    graph::export_json(g, join(cfg.output_dir, tag.str() + ".json"));
    write_metadata(cfg, "probabilistic", join(cfg.output_dir, "metadata_probabilistic.json"));
}

void graph_autoenc(const RunConfig& cfg, std::ostream& log) {
    const std::uint64_t seed = cfg.require_seed("graph autoenc");
    const auto ratios = gp::load_ratios(join(cfg.output_dir, "ratios.json"));
    const std::string ranking_path =
        join(cfg.output_dir, "ranking_k" + std::to_string(cfg.rank_k) + ".csv");
    const auto subset = top_subset(ranking_path, cfg.autoenc_top_n);
    const std::set<std::string> subset_set(subset.begin(), subset.end());
    const auto sd_scores = read_ranking_csv(ranking_path);
    const auto regulation = regulation_from_ratios(ratios);

    std::vector<gp::RatioSeries> subset_ratios;
    for (const auto& r : ratios)
        if (subset_set.count(r.compound_id)) subset_ratios.push_back(r);

    autoenc::TrainSettings settings;
    settings.max_epochs = cfg.autoenc_max_epochs;
    settings.batch_size = cfg.autoenc_batch_size;
    const auto outcomes =
        autoenc::train_autoencoders(ratios, cfg.autoenc_windows, cfg.autoenc_feature_dims,
                                    settings, derive_seed(seed, 70), cfg.workers);

    struct Scored {
        const autoenc::ConvAutoencoder* model;
        std::vector<autoenc::FeatureOccurrence> occurrences;
        std::vector<autoenc::Witness> witnesses;
        double threshold;
        std::size_t n;
    };
    std::vector<autoenc::ModelScore> scores;
    std::vector<Scored> scored;
    for (const auto& outcome : outcomes) {
        if (!outcome.model) {
            log << "warning: autoencoder (window " << outcome.window << ", features "
                << outcome.feature_dim << ") failed: " << outcome.error << "\n";
            continue;
        }
        const auto occurrences = autoenc::extract_occurrences(*outcome.model, subset_ratios);
        for (std::size_t n : cfg.autoenc_witnesses) {
            const auto solved =
                autoenc::solve_threshold(occurrences, n, cfg.autoenc_target_edges);
            if (!solved.target_reached)
                log << "warning: target edge count unreachable for window " << outcome.window
                    << " features " << outcome.feature_dim << " n " << n << "\n";
            auto witnesses = autoenc::match_occurrences(occurrences, solved.threshold);
            autoenc::ModelScore ms;
            ms.window = outcome.window;
            ms.feature_dim = outcome.feature_dim;
            ms.n_witnesses = n;
            ms.reconstruction_mse = outcome.model->validation_mse;
            ms.consistency = autoenc::witness_consistency(occurrences, witnesses);
            scores.push_back(ms);
            scored.push_back({&*outcome.model, occurrences, std::move(witnesses),
                              solved.threshold, n});
        }
    }
    if (scores.empty()) throw MissingArtifactError("no autoencoder model trained successfully");
    const auto ranked = autoenc::rank_models(scores);

    std::ofstream csv(join(cfg.output_dir, "autoenc_ranking.csv"));
    csv << "window,feature_dim,n,mse,consistency,rank\n";
    for (const auto& r : ranked)
        csv << r.window << ',' << r.feature_dim << ',' << r.n_witnesses << ','
            << fmt17(r.reconstruction_mse) << ',' << fmt17(r.consistency) << ',' << r.rank
            << "\n";

    for (const auto& r : ranked) {
        if (!r.generate) continue;
        // Find the matching scored entry.
        const Scored* entry = nullptr;
        for (const auto& s : scored)
            if (s.model->window == r.window && s.model->feature_dim == r.feature_dim &&
                s.n == r.n_witnesses) {
                entry = &s;
                break;
            }
        if (!entry) continue;
        const auto edges = autoenc::lift_to_genes(entry->occurrences, entry->witnesses,
                                                  entry->n);
        graph::CausalGraph g;
        std::set<std::string> used;
        for (const auto& [a, b] : edges.undirected) {
            g.undirected_edges.push_back({a, b, 1.0});
            used.insert(a);
            used.insert(b);
        }
        for (const auto& [from, to] : edges.directed) {
            graph::DirectedEdge e;
            e.from = from;
            e.to = to;
            e.probability = 1.0;
            g.directed_edges.push_back(std::move(e));
            used.insert(from);
            used.insert(to);
        }
        for (const auto& id : used) {
            graph::GraphNode node;
            node.compound_id = id;
            auto reg = regulation.find(id);
            node.regulation = reg == regulation.end() ? graph::Regulation::up : reg->second;
            auto sc = sd_scores.find(id);
            node.sd_score = sc == sd_scores.end() ? 0.0 : sc->second;
            g.nodes.push_back(std::move(node));
        }
        std::ostringstream tag;
        tag << "graph_autoenc_w" << r.window << "_f" << r.feature_dim << "_n" << r.n_witnesses;
        graph::export_dot(g, join(cfg.output_dir, tag.str() + ".dot"));
        graph::export_json(g, join(cfg.output_dir, tag.str() + ".json"));
        log << tag.str() << ": " << g.undirected_edges.size() << " undirected, "
            << g.directed_edges.size() << " directed edges\n";
    }
    write_metadata(cfg, "autoenc", join(cfg.output_dir, "metadata_autoenc.json"));
}

void graph_deepwide(const RunConfig& cfg, std::ostream& log) {
    const std::uint64_t seed = cfg.require_seed("graph deepwide");
    const auto ratios = gp::load_ratios(join(cfg.output_dir, "ratios.json"));
    const auto data = deepwide::build_change_dataset(ratios);
    const std::string ranking_path =
        join(cfg.output_dir, "ranking_k" + std::to_string(cfg.rank_k) + ".csv");
    const auto subset = top_subset(ranking_path, cfg.deepwide_max_genes);
    const auto regulation = regulation_from_ratios(ratios);

    std::vector<const deepwide::ChangeDataset*> pretrain_sets;
    std::vector<deepwide::ChangeDataset> extra_storage;
    if (!cfg.deepwide_pretrain_ratios.empty()) {
        for (const auto& path : cfg.deepwide_pretrain_ratios)
            extra_storage.push_back(deepwide::build_change_dataset(gp::load_ratios(path)));
        for (const auto& d : extra_storage) pretrain_sets.push_back(&d);
        pretrain_sets.push_back(&data);
    }

    struct GridEntry {
        std::size_t depth, width;
    };
    std::vector<GridEntry> grid;
    for (auto d : cfg.deepwide_depths)
        for (auto w : cfg.deepwide_widths) grid.push_back({d, w});

    std::vector<deepwide::TrainedDeepWide> trained(grid.size());
    parallel_for(grid.size(), cfg.workers, [&](std::size_t k) {
        const std::uint64_t model_seed = derive_seed(seed, 80, k);
        if (pretrain_sets.empty()) {
            trained[k] = deepwide::train_deepwide(grid[k].depth, grid[k].width, data,
                                                  cfg.deepwide_epochs, cfg.deepwide_batch_size,
                                                  model_seed);
        } else {
            trained[k] = deepwide::pretrain_then_finetune(
                grid[k].depth, grid[k].width, pretrain_sets, data, cfg.deepwide_epochs / 2,
                cfg.deepwide_epochs - cfg.deepwide_epochs / 2, cfg.deepwide_batch_size,
                model_seed);
        }
    });

    std::vector<deepwide::RelativeMSEReport> reports;
    for (const auto& t : trained) reports.push_back(t.report);
    const auto ranked = deepwide::rank_deepwide_models(reports);

    std::ofstream csv(join(cfg.output_dir, "deepwide_ranking.csv"));
    csv << "depth,width,train_mse,test_mse,relative_test_mse\n";
    for (const auto& r : ranked) {
        csv << r.depth << ',' << r.width << ',' << fmt17(r.train_mse) << ','
            << fmt17(r.test_mse) << ',';
        if (r.relative_test_mse) csv << fmt17(*r.relative_test_mse);
        csv << "\n";
    }

    deepwide::ExtractionConfig ecfg;
    ecfg.max_degree = cfg.deepwide_max_degree;
    ecfg.max_genes = cfg.deepwide_max_genes;
    ecfg.gene_subset = subset;
    for (const auto& r : ranked) {
        if (!r.generate) continue;
        const deepwide::TrainedDeepWide* entry = nullptr;
        for (std::size_t k = 0; k < grid.size(); ++k)
            if (grid[k].depth == r.depth && grid[k].width == r.width) {
                entry = &trained[k];
                break;
            }
        if (!entry) continue;
        const auto units = deepwide::extract_graph(entry->net, data.gene_ids, ecfg);
        const auto g = deepwide::to_causal_graph(units, regulation);
        std::ostringstream tag;
        tag << "graph_deepwide_d" << r.depth << "_w" << r.width << "_deg"
            << cfg.deepwide_max_degree;
        graph::export_dot(g, join(cfg.output_dir, tag.str() + ".dot"));
        graph::export_json(g, join(cfg.output_dir, tag.str() + ".json"));
        log << tag.str() << ": " << g.directed_edges.size() << " edges, " << g.nodes.size()
            << " nodes\n";
    }
    write_metadata(cfg, "deepwide", join(cfg.output_dir, "metadata_deepwide.json"));
}

}  // namespace

void cmd_graph(const RunConfig& cfg, const std::string& method, std::ostream& log) {
    ensure_output_dir(cfg);
    if (method == "probabilistic") graph_probabilistic(cfg, log);
    else if (method == "autoenc") graph_autoenc(cfg, log);
    else if (method == "deepwide") graph_deepwide(cfg, log);
    else
        throw UsageError("graph: expected 'probabilistic', 'autoenc' or 'deepwide', got '" +
                         method + "'");
}

void cmd_compare_ref(const RunConfig& cfg, const std::string& graph_path,
                     const std::string& profiles_path, std::ostream& log) {
    const auto g = graph::import_json(graph_path);
    std::ifstream in(profiles_path);
    if (!in) throw MissingArtifactError("cannot open profile matrix: " + profiles_path);
    std::vector<std::pair<std::string, std::vector<double>>> profiles;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        std::vector<std::string> fields;
        std::string cur;
        for (char ch : line) {
            if (ch == ',') {
                fields.push_back(cur);
                cur.clear();
            } else if (ch != '\r') {
                cur.push_back(ch);
            }
        }
        fields.push_back(cur);
        if (fields.size() < 2)
            throw ParseError(profiles_path + ": line " + std::to_string(line_no) +
                             ": expected compound_id plus signature columns");
        // A non-numeric second field marks the header row.
        try {
            std::size_t pos = 0;
            (void)std::stod(fields[1], &pos);
            if (pos != fields[1].size()) throw std::invalid_argument(fields[1]);
        } catch (const std::exception&) {
            if (line_no == 1) continue;
            throw ParseError(profiles_path + ": line " + std::to_string(line_no) +
                             ": non-numeric signature value '" + fields[1] + "'");
        }
        std::vector<double> values;
        for (std::size_t i = 1; i < fields.size(); ++i) values.push_back(std::stod(fields[i]));
        profiles.emplace_back(fields[0], std::move(values));
    }
    std::vector<std::string> warnings;
    const auto ref =
        graph::build_correlation_reference(profiles, cfg.reference_threshold, &warnings);
    for (const auto& w : warnings) log << "warning: " << w << "\n";
    const auto cmp = graph::compare_to_reference(g, ref);
    nlohmann::json j;
    j["restricted_edges"] = cmp.restricted_edges;
    j["overlap"] = cmp.overlap;
    if (cmp.accuracy) j["accuracy"] = *cmp.accuracy;
    j["reference_threshold"] = cfg.reference_threshold;
    j["reference_edges"] = ref.edges.size();
    ensure_output_dir(cfg);
    std::ofstream out(join(cfg.output_dir, "comparison.json"));
    out << j.dump(2);
    log << "restricted edges " << cmp.restricted_edges << ", overlap " << cmp.overlap;
    if (cmp.accuracy) log << ", accuracy " << *cmp.accuracy;
    log << "\n";
}

void validate_metadata(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("cannot open metadata: " + path);
    nlohmann::json j;
    in >> j;
    RunConfig cfg = cli::default_config_for(
        cli::scale_from_string(j.value("run.scale", std::string("desk"))));
    for (const auto& [full_key, value] : j.items()) {
        if (full_key == "method" || full_key == "run.scale" || full_key == "run.seed") continue;
        const auto dot = full_key.find('.');
        if (dot == std::string::npos) continue;
        std::string rendered;
        if (value.is_string()) rendered = value.get<std::string>();
        else if (value.is_boolean()) rendered = value.get<bool>() ? "true" : "false";
        else rendered = value.dump();
        cli::apply_config_line(cfg, full_key.substr(0, dot), full_key.substr(dot + 1), rendered);
    }
    if (j.contains("run.seed")) cfg.seed = j.at("run.seed").get<std::uint64_t>();
    cfg.validate();
}

}  // namespace causalnet::pipeline
