#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "causalnet/errors.hpp"
#include "causalnet/pipeline.hpp"
#include "causalnet/run_config.hpp"

namespace {

// Exit codes: 0 success, 2 input error, 3 training error, 4 missing artifact,
// 1 anything else.
int run(int argc, char** argv) {
    CLI::App app{"causalnet: probabilistic causal network synthesis from short time series"};
    app.require_subcommand(1);

    std::string config_path;
    std::string scale_name = "desk";
    std::uint64_t seed = 0;
    bool seed_set = false;
    int workers = 1;
    app.add_option("--config", config_path, "Run configuration file")->required();
    app.add_option("--scale", scale_name, "Size profile: desk or paper")
        ->check(CLI::IsMember({"desk", "paper"}));
    auto* seed_opt = app.add_option("--seed", seed, "Random seed for data generation/training");
    app.add_option("--workers", workers, "Worker thread cap (1 = fully sequential)");

    auto* gp_fit = app.add_subcommand("gp-fit", "Fit GPs, write summaries/ratios/rankings");
    auto* rank = app.add_subcommand("rank", "Recompute SD-band rankings from saved summaries");
    auto* synth_data = app.add_subcommand("synth-data", "Generate labeled synthetic pair sets");

    std::string train_which;
    auto* train = app.add_subcommand("train", "Curriculum-train a detector");
    train->add_option("which", train_which, "causality or lag")
        ->required()
        ->check(CLI::IsMember({"causality", "lag"}));

    std::string validate_which;
    auto* validate = app.add_subcommand("validate", "Validate a saved detector");
    validate->add_option("which", validate_which, "causality or lag")
        ->required()
        ->check(CLI::IsMember({"causality", "lag"}));

    std::string graph_method;
    auto* graph = app.add_subcommand("graph", "Synthesize causal graphs");
    graph->add_option("method", graph_method, "probabilistic, autoenc or deepwide")
        ->required()
        ->check(CLI::IsMember({"probabilistic", "autoenc", "deepwide"}));

    std::string cmp_graph_path, cmp_profiles_path;
    auto* compare = app.add_subcommand("compare-ref",
                                       "Compare a graph against a correlation reference");
    compare->add_option("--graph", cmp_graph_path, "Graph JSON to evaluate")->required();
    compare->add_option("--profiles", cmp_profiles_path, "Signature profile matrix CSV")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }
    seed_set = seed_opt->count() > 0;

    try {
        causalnet::cli::RunConfig cfg = causalnet::cli::load_run_config(
            config_path, causalnet::cli::scale_from_string(scale_name));
        if (seed_set) cfg.seed = seed;
        if (workers > 0) cfg.workers = workers;
        cfg.validate();

        std::ostream& log = std::cout;
        if (gp_fit->parsed()) causalnet::pipeline::cmd_gp_fit(cfg, log);
        else if (rank->parsed()) causalnet::pipeline::cmd_rank(cfg, log);
        else if (synth_data->parsed()) causalnet::pipeline::cmd_synth_data(cfg, log);
        else if (train->parsed()) causalnet::pipeline::cmd_train(cfg, train_which, log);
        else if (validate->parsed()) causalnet::pipeline::cmd_validate(cfg, validate_which, log);
        else if (graph->parsed()) causalnet::pipeline::cmd_graph(cfg, graph_method, log);
        else if (compare->parsed())
            causalnet::pipeline::cmd_compare_ref(cfg, cmp_graph_path, cmp_profiles_path, log);
        return 0;
    } catch (const causalnet::TrainingError& e) {
        std::cerr << "training error: " << e.what() << "\n";
        return 3;
    } catch (const causalnet::MissingArtifactError& e) {
        std::cerr << "missing artifact: " << e.what() << "\n";
        return 4;
    } catch (const causalnet::ParseError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const causalnet::SchemaError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
