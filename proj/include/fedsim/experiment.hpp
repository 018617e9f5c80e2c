#pragma once

#include <filesystem>
#include <vector>

#include "fedsim/config.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/report.hpp"

namespace fedsim {

struct ExperimentOutput {
    RunSummary summary;
    std::vector<std::vector<RoundRecord>> per_seed_records;
    std::filesystem::path run_dir;
};

// Deterministic given (config, seeds): builds data, clients and model per
// seed, runs the configured rounds, streams round metrics to CSV and writes
// resolved config, summary and checkpoints under
// <output_root>/<output_dir>/<name>/.
ExperimentOutput run_experiment(const ExperimentConfig& cfg,
                                const std::filesystem::path& output_root = {});

// Everything run_experiment builds for one seed, exposed for direct use.
struct SeedSetup {
    Cnn6 model;
    ModelState global;
    std::vector<ClientState> clients;
    std::vector<Shard> domain_tests;
};
SeedSetup build_seed_setup(const ExperimentConfig& cfg, std::uint64_t seed);

// Train per config (first seed), then refresh every client once more from
// the final global and report the chosen BN layer's statistics.
BnStatsReport collect_bn_stats(const ExperimentConfig& cfg, std::size_t layer_index);

// Serialize one round record as a CSV row (header in csv_header()).
std::string csv_header(std::size_t num_domains);
std::string csv_row(const RoundRecord& record, bool timing);

// Write every shard (per-client train + per-domain test) as binary files
// plus a manifest under `out_dir`, using the first configured seed.
void dump_dataset(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace fedsim
