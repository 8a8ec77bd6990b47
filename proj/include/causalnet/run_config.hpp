#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "causalnet/graph.hpp"
#include "causalnet/synth.hpp"

namespace causalnet::cli {

// Built-in size profiles; the config file overrides individual keys.
enum class Scale { desk, paper };

Scale scale_from_string(const std::string& s);
std::string to_string(Scale s);

struct RunConfig {
    // [paths]
    std::string input_csv;
    std::string output_dir = "out";

    // [gp]
    double length_scale = 2.0;
    std::optional<double> signal_variance;  // absent = calibrate from data
    std::size_t signal_subsample = 200;
    double t_max_hours = 48.0;

    // [synth]
    std::size_t window = 80;
    std::size_t mixin = 4;
    synth::Mode mode = synth::Mode::noisy;
    std::size_t set_size = 20000;
    double split_fraction = 0.9;

    // [training]
    std::vector<std::size_t> stages = {0, 2, 4, 9};
    std::size_t epochs_per_stage = 100;
    std::size_t batch_size = 512;
    std::vector<double> calibration_thresholds = {0.01, 0.025, 0.05, 0.075, 0.1, 0.15, 0.2, 0.3};

    // [graph]
    double probability_cutoff = 0.7;
    double lag_threshold = 0.025;
    std::size_t top_n = 100;
    std::size_t rank_k = 2;
    graph::WindowPolicy window_policy = graph::WindowPolicy::centered;
    bool directed = true;

    // [autoenc]
    std::vector<std::size_t> autoenc_windows = {31, 41, 51, 61};
    std::vector<std::size_t> autoenc_feature_dims = {5, 15};
    std::vector<std::size_t> autoenc_witnesses = {1, 2, 3, 5, 10};
    std::size_t autoenc_target_edges = 100;
    std::size_t autoenc_max_epochs = 150;
    std::size_t autoenc_batch_size = 32;
    std::size_t autoenc_top_n = 100;

    // [deepwide]
    std::vector<std::size_t> deepwide_depths = {2, 3};
    std::vector<std::size_t> deepwide_widths = {16, 32};
    std::size_t deepwide_epochs = 200;
    std::size_t deepwide_batch_size = 10;
    std::size_t deepwide_max_degree = 3;
    std::size_t deepwide_max_genes = 100;
    std::vector<std::string> deepwide_pretrain_ratios;  // extra ratio files

    // [compare]
    double reference_threshold = 0.075;

    // global flags
    std::optional<std::uint64_t> seed;
    int workers = 1;
    Scale scale = Scale::desk;

    void validate() const;
    std::uint64_t require_seed(const std::string& command) const;
};

RunConfig default_config_for(Scale scale);

// Plain-text sectioned key=value config; later keys override earlier ones
// and the scale profile supplies defaults.
RunConfig load_run_config(const std::string& path, Scale scale);
void apply_config_line(RunConfig& cfg, const std::string& section, const std::string& key,
                       const std::string& value);

}  // namespace causalnet::cli
