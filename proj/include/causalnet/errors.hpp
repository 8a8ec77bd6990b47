#pragma once

#include <stdexcept>
#include <string>

namespace causalnet {

// Caller passed arguments violating a precondition.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input data (CSV rows, config values). Carries enough context to
// name the offending line.
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Structurally valid input with an out-of-schema value.
struct SchemaError : std::runtime_error {
    explicit SchemaError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure while fitting (non-PD Gram matrix after jitter, etc).
struct FitError : std::runtime_error {
    explicit FitError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training diverged; stage index identifies the curriculum stage.
struct TrainingError : std::runtime_error {
    int stage;
    TrainingError(const std::string& msg, int stage_index)
        : std::runtime_error(msg), stage(stage_index) {}
};

// Model/graph file does not match the expected on-disk format.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// A required artifact (model file, ratio file) is missing.
struct MissingArtifactError : std::runtime_error {
    explicit MissingArtifactError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace causalnet
