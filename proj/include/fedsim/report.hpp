#pragma once

#include <string>
#include <vector>

#include "fedsim/errors.hpp"

namespace fedsim {

// Final per-seed accuracies of one experiment plus seed statistics
// (population standard deviation over seeds).
struct RunSummary {
    std::string name;
    std::string algorithm;
    std::string dataset_fingerprint;
    std::vector<std::uint64_t> seeds;
    std::vector<std::vector<double>> per_seed_domain_acc;  // [seed][domain]
    std::vector<double> domain_mean;
    std::vector<double> domain_std;
    double overall_mean = 0.0;
    double overall_std = 0.0;

    std::string to_json() const;
    static RunSummary from_json(const std::string& text);
};

RunSummary summarize(std::string name, std::string algorithm, std::string fingerprint,
                     std::vector<std::uint64_t> seeds,
                     std::vector<std::vector<double>> per_seed_domain_acc);

struct ComparisonReport {
    std::string table;  // human-readable
    std::string csv;    // machine-readable
};

// Rows = domains + Average, columns = input summaries in order, cells =
// "mean (std)". All summaries must share the dataset fingerprint.
ComparisonReport compare_report(const std::vector<RunSummary>& summaries);

}  // namespace fedsim
