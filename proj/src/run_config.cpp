#include "causalnet/run_config.hpp"

#include <fstream>
#include <sstream>

#include "causalnet/errors.hpp"

namespace causalnet::cli {

Scale scale_from_string(const std::string& s) {
    if (s == "desk") return Scale::desk;
    if (s == "paper") return Scale::paper;
    throw SchemaError("unknown scale '" + s + "' (expected desk or paper)");
}

std::string to_string(Scale s) { return s == Scale::desk ? "desk" : "paper"; }

RunConfig default_config_for(Scale scale) {
    RunConfig cfg;
    cfg.scale = scale;
    if (scale == Scale::paper) {
        cfg.set_size = 1000000;
        cfg.epochs_per_stage = 1000;
        cfg.batch_size = 20000;
        cfg.top_n = 1000;
        cfg.autoenc_max_epochs = 1000;
        cfg.autoenc_feature_dims = {3, 5, 15, 50, 100};
        cfg.deepwide_depths = {2, 3, 4, 6, 8, 10};
        cfg.deepwide_widths = {4, 16, 64, 256, 1024, 4096};
        cfg.deepwide_epochs = 1000;
    }
    return cfg;
}

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double to_double(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw SchemaError("config key '" + key + "': not a number: '" + v + "'");
    }
}

std::size_t to_size(const std::string& v, const std::string& key) {
    const double x = to_double(v, key);
    if (x < 0 || x != static_cast<double>(static_cast<std::size_t>(x)))
        throw SchemaError("config key '" + key + "': not a nonnegative integer: '" + v + "'");
    return static_cast<std::size_t>(x);
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> items;
    std::string cur;
    for (char ch : v) {
        if (ch == ',' || ch == ';') {
            if (!trim(cur).empty()) items.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    if (!trim(cur).empty()) items.push_back(trim(cur));
    return items;
}

std::vector<std::size_t> to_size_list(const std::string& v, const std::string& key) {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(v)) out.push_back(to_size(item, key));
    return out;
}

std::vector<double> to_double_list(const std::string& v, const std::string& key) {
    std::vector<double> out;
    for (const auto& item : split_list(v)) out.push_back(to_double(item, key));
    return out;
}

bool to_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw SchemaError("config key '" + key + "': not a boolean: '" + v + "'");
}

}  // namespace

void apply_config_line(RunConfig& cfg, const std::string& section, const std::string& key,
                       const std::string& value) {
    const std::string full = section.empty() ? key : section + "." + key;
    if (section == "paths") {
        if (key == "input_csv") cfg.input_csv = value;
        else if (key == "output_dir") cfg.output_dir = value;
        else throw SchemaError("unknown config key: " + full);
    } else if (section == "gp") {
        if (key == "length_scale") cfg.length_scale = to_double(value, full);
        else if (key == "signal_variance") {
            if (value == "auto") cfg.signal_variance.reset();
            else cfg.signal_variance = to_double(value, full);
        } else if (key == "signal_subsample") cfg.signal_subsample = to_size(value, full);
        else if (key == "t_max_hours") cfg.t_max_hours = to_double(value, full);
        else throw SchemaError("unknown config key: " + full);
    } else if (section == "synth") {
        if (key == "window") cfg.window = to_size(value, full);
        else if (key == "mixin") cfg.mixin = to_size(value, full);
        else if (key == "mode") cfg.mode = synth::mode_from_string(value);
        else if (key == "set_size") cfg.set_size = to_size(value, full);
        else if (key == "split_fraction") cfg.split_fraction = to_double(value, full);
        else throw SchemaError("unknown config key: " + full);
    } else if (section == "training") {
        if (key == "stages") cfg.stages = to_size_list(value, full);
        else if (key == "epochs_per_stage") cfg.epochs_per_stage = to_size(value, full);
        else if (key == "batch_size") cfg.batch_size = to_size(value, full);
        else if (key == "calibration_thresholds")
            cfg.calibration_thresholds = to_double_list(value, full);
        else throw SchemaError("unknown config key: " + full);
    } else if (section == "graph") {
        if (key == "probability_cutoff") cfg.probability_cutoff = to_double(value, full);
        else if (key == "lag_threshold") cfg.lag_threshold = to_double(value, full);
        else if (key == "top_n") cfg.top_n = to_size(value, full);
        else if (key == "rank_k") cfg.rank_k = to_size(value, full);
        else if (key == "window_policy")
            cfg.window_policy = graph::window_policy_from_string(value);
        else if (key == "directed") cfg.directed = to_bool(value, full);
        else throw SchemaError("unknown config key: " + full);
    } else if (section == "autoenc") {
        if (key == "windows") cfg.autoenc_windows = to_size_list(value, full);
        else if (key == "feature_dims") cfg.autoenc_feature_dims = to_size_list(value, full);
        else if (key == "witnesses") cfg.autoenc_witnesses = to_size_list(value, full);
        else if (key == "target_edges") cfg.autoenc_target_edges = to_size(value, full);
        else if (key == "max_epochs") cfg.autoenc_max_epochs = to_size(value, full);
        else if (key == "batch_size") cfg.autoenc_batch_size = to_size(value, full);
        else if (key == "top_n") cfg.autoenc_top_n = to_size(value, full);
        else throw SchemaError("unknown config key: " + full);
    } else if (section == "deepwide") {
        if (key == "depths") cfg.deepwide_depths = to_size_list(value, full);
        else if (key == "widths") cfg.deepwide_widths = to_size_list(value, full);
        else if (key == "epochs") cfg.deepwide_epochs = to_size(value, full);
        else if (key == "batch_size") cfg.deepwide_batch_size = to_size(value, full);
        else if (key == "max_degree") cfg.deepwide_max_degree = to_size(value, full);
        else if (key == "max_genes") cfg.deepwide_max_genes = to_size(value, full);
        else if (key == "pretrain_ratios") cfg.deepwide_pretrain_ratios = split_list(value);
        else throw SchemaError("unknown config key: " + full);
    } else if (section == "compare") {
        if (key == "reference_threshold") cfg.reference_threshold = to_double(value, full);
        else throw SchemaError("unknown config key: " + full);
    } else if (section == "run") {
        if (key == "seed") cfg.seed = static_cast<std::uint64_t>(to_size(value, full));
        else if (key == "workers") cfg.workers = static_cast<int>(to_size(value, full));
        else throw SchemaError("unknown config key: " + full);
    } else {
        throw SchemaError("unknown config section: [" + section + "]");
    }
}

RunConfig load_run_config(const std::string& path, Scale scale) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config file: " + path);
    RunConfig cfg = default_config_for(scale);
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ParseError(path + ": line " + std::to_string(line_no) +
                                 ": malformed section header");
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ParseError(path + ": line " + std::to_string(line_no) +
                             ": expected key = value");
        apply_config_line(cfg, section, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

void RunConfig::validate() const {
    if (!(length_scale > 0.0)) throw SchemaError("gp.length_scale must be positive");
    if (signal_variance && !(*signal_variance > 0.0))
        throw SchemaError("gp.signal_variance must be positive");
    if (!(t_max_hours > 0.0)) throw SchemaError("gp.t_max_hours must be positive");
    if (!(window > 0 && window < 101)) throw SchemaError("synth.window must be in (0, 101)");
    if (!(split_fraction > 0.0 && split_fraction < 1.0))
        throw SchemaError("synth.split_fraction must be in (0, 1)");
    if (stages.empty()) throw SchemaError("training.stages must be nonempty");
    for (std::size_t i = 1; i < stages.size(); ++i)
        if (stages[i] < stages[i - 1])
            throw SchemaError("training.stages must be nondecreasing");
    if (!(probability_cutoff > 0.5 && probability_cutoff < 1.0))
        throw SchemaError("graph.probability_cutoff must be in (0.5, 1)");
    if (!(lag_threshold > 0.0 && lag_threshold <= 1.0))
        throw SchemaError("graph.lag_threshold must be in (0, 1]");
    if (rank_k != 1 && rank_k != 2) throw SchemaError("graph.rank_k must be 1 or 2");
    if (workers < 1) throw SchemaError("run.workers must be at least 1");
}

std::uint64_t RunConfig::require_seed(const std::string& command) const {
    if (!seed)
        throw SchemaError("command '" + command + "' requires a seed (--seed or [run] seed)");
    return *seed;
}

}  // namespace causalnet::cli
