#pragma once

// Experiment configuration: one JSON document with optional "preset" inheritance.

#include "nvdiff/eval.hpp"
#include "nvdiff/graph.hpp"
#include "nvdiff/model.hpp"
#include "nvdiff/nvdiff_e.hpp"
#include "nvdiff/sampling.hpp"
#include "nvdiff/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace nvdiff {

struct ExperimentConfig {
    std::string preset;  // informational once resolved
    DatasetSpec dataset;
    // Training corpus file; required for presets without a bundled generator (qm9, zinc250k).
    std::string corpus;
    double train_fraction = 0.8;
    ModelConfig model;
    TrainConfig train;
    SolverConfig solver;
    EvalOptions eval;
    EnaConfig ena;  // data-space baseline, sized like the score net
    int num_samples = 128;
    std::string output_dir = "runs/default";
    std::uint64_t seed = 0;

    // Throws ConfigError listing every violated constraint, including cross-field ones.
    void validate() const;
};

std::vector<std::string> preset_names();
// qm9, zinc250k, community, ego, community-small, ego-small.
ExperimentConfig preset_config(const std::string& name);

nlohmann::json to_json(const ExperimentConfig& cfg);
// Applies overrides on top of "preset" (default: community-small). Unknown keys are errors.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace nvdiff
