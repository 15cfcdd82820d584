#pragma once

#include <json.hpp>

#include "consense/checkpoint.hpp"
#include "consense/metrics.hpp"
#include "consense/trainer.hpp"

namespace consense {

struct ExperimentConfig {
    // Data source: synthetic generation or a saved dataset, never both.
    bool synthetic = true;
    std::string dataset_path;  // manifest base path (no extension)
    int classes = 16;
    int per_class = 20;
    int t_len = 64;
    int channels = 18;
    float noise_sigma = 0.25f;
    unsigned data_seed = 1;

    std::vector<int> split{8, 2, 2, 2, 2};
    bool shuffle_classes = false;

    std::string method = "consense";  // consense | finetune
    bool disable_prefixes = false;
    bool disable_selective = false;
    std::string prefix_init = "adapter";  // adapter | zero | random

    int heads = 9;
    int gaussians = 10;
    float sigma_init = 8.0f;
    int mlp_hidden1 = 0;
    int mlp_hidden2 = 0;
    float dropout = 0.1f;
    int adapter_rank = 0;

    SessionConfig session;
    unsigned seed = 1;
    std::string out_dir;  // empty = no artifacts written

    void validate() const;
};

nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

struct ExperimentResult {
    MetricsRecord metrics;
    double avg_accuracy = 0.0;
    double avg_forgetting = 0.0;  // 0 for single-task runs
    ParamCounts params;
};

nlohmann::json summary_json(const ExperimentConfig& cfg, const ExperimentResult& result);

/// Runs the full class-incremental schedule: session 1 trains everything
/// (then freezes the shared backbone under method=consense), later sessions
/// follow the configured method. Per-session checkpoints, the accuracy
/// matrix CSV, a summary JSON and a config echo land in out_dir when set.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

}  // namespace consense
