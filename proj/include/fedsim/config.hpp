#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedsim/datagen.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/model.hpp"

namespace fedsim {

struct DatasetBlock {
    std::size_t domains = 3;
    std::size_t classes = 10;
    std::size_t train_per_domain = 500;
    std::size_t test_per_domain = 100;
    std::size_t channels = 3;
    std::size_t image_size = 28;
    double gap_strength = 1.0;
    std::string partition = "domain";  // domain | iid | dirichlet
    double alpha = 0.5;
    std::size_t clients_per_domain = 2;  // domain partition
    std::size_t num_clients = 10;        // iid / dirichlet partitions
};

struct FederationBlock {
    std::string algorithm = "fedavg";
    std::size_t rounds = 50;
    double client_fraction = 1.0;
    std::size_t local_epochs = 1;
    std::size_t batch_size = 32;
    std::size_t freeze_round = 0;  // resolved: rounds / 2 unless given
    bool freeze_round_set = false;
    std::size_t checkpoint_interval = 0;  // 0 = final checkpoint only
};

struct ModelBlock {
    double width_scale = 0.125;
    double dropout = 0.5;
    bool wsconv = true;  // fedwon ablation arm when false
};

struct OptimBlock {
    double lr = 0.0;  // resolved per algorithm unless given
    bool lr_set = false;
    std::string agc = "auto";  // auto | on | off
    double agc_lambda = 0.64;
    double agc_eps = 1e-3;
    std::string agc_scope = "conv_and_fc";  // conv_and_fc | conv_only
    double prox_mu = 0.01;
};

struct ExperimentConfig {
    std::string name;  // output subdirectory; defaults to the algorithm name
    DatasetBlock dataset;
    FederationBlock federation;
    ModelBlock model;
    OptimBlock optim;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::string output_dir = "runs";
    bool timing = false;  // when false the CSV seconds column is 0 so replays
                          // are byte-identical

    Algorithm algorithm() const;
    AlgorithmSpec algorithm_spec() const;
    ModelSpec model_spec() const;
    DataGenConfig datagen_config() const;
    std::size_t total_clients() const;
    bool agc_active() const;

    // Canonical resolved-config document, written next to results.
    std::string resolved_json() const;
    // Hash over the dataset block and seeds; summaries compared side by side
    // must agree on it.
    std::string dataset_fingerprint() const;
};

// Strict parse: unknown keys are ParseError, constraint violations
// (stateful with C < 1, batch-norm with B < 2, ...) are ConstraintViolation.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Resolve defaults and enforce every constraint; parse_config and
// apply_override call this, tests building configs in code may too.
void finalize_config(ExperimentConfig& cfg);

// Apply a "dotted.path=value" override (CLI --set).
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

}  // namespace fedsim
