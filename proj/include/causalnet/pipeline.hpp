#pragma once

#include <iosfwd>
#include <string>

#include "causalnet/run_config.hpp"
#include "causalnet/synth.hpp"

namespace causalnet::pipeline {

// Fits one GP per compound/condition; writes summaries, models, ratios and
// the SD-band rankings (k = 1 and k = 2) into the output directory.
void cmd_gp_fit(const cli::RunConfig& cfg, std::ostream& log);

// Recomputes the SD-band rankings from saved summaries.
void cmd_rank(const cli::RunConfig& cfg, std::ostream& log);

// Builds labeled and lag pair sets from saved GP models.
void cmd_synth_data(const cli::RunConfig& cfg, std::ostream& log);

// Curriculum-trains a detector; writes model, stage reports and (for the lag
// detector) the threshold calibration table.
void cmd_train(const cli::RunConfig& cfg, const std::string& which, std::ostream& log);

// Re-validates a saved detector on a freshly generated synthetic test set.
void cmd_validate(const cli::RunConfig& cfg, const std::string& which, std::ostream& log);

// Synthesizes causal graphs: probabilistic (Siamese detectors), autoenc
// (witness counting) or deepwide (positive-weight extraction).
void cmd_graph(const cli::RunConfig& cfg, const std::string& method, std::ostream& log);

// Compares a synthesized graph against a correlation-based reference built
// from a signature profile matrix.
void cmd_compare_ref(const cli::RunConfig& cfg, const std::string& graph_path,
                     const std::string& profiles_path, std::ostream& log);

// Reads a graph-synthesis metadata file back and re-validates it as config.
void validate_metadata(const std::string& path);

// Rebuilds the gene pool (posterior samplers) from a saved gp_models.json.
synth::GenePool load_gene_pool(const std::string& models_path, double* t_max_hours = nullptr);

}  // namespace causalnet::pipeline
