#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fedsim/experiment.hpp"
#include "fedsim/serialize.hpp"

namespace {

namespace fs = std::filesystem;

fs::path output_root() {
    if (const char* env = std::getenv("FEDSIM_OUTPUT_ROOT")) return fs::path(env);
    return fs::path(".");
}

fedsim::ExperimentConfig load_with_overrides(const std::string& config_path,
                                             const std::vector<std::string>& overrides) {
    fedsim::ExperimentConfig cfg = fedsim::load_config(config_path);
    for (const auto& assignment : overrides) {
        fedsim::apply_override(cfg, assignment);
    }
    return cfg;
}

int run_command(const std::string& config_path, const std::vector<std::string>& overrides) {
    const auto cfg = load_with_overrides(config_path, overrides);
    const auto out = fedsim::run_experiment(cfg, output_root());
    std::cout << "run '" << cfg.name << "' finished: " << out.run_dir.string() << "\n";
    std::cout << "mean accuracy " << out.summary.overall_mean << " (std "
              << out.summary.overall_std << ") over " << cfg.seeds.size() << " seed(s)\n";
    return 0;
}

int report_command(const std::vector<std::string>& summary_paths, const std::string& csv_out) {
    std::vector<fedsim::RunSummary> summaries;
    for (const auto& path : summary_paths) {
        std::ifstream in(path);
        if (!in) throw fedsim::IoError("cannot read " + path);
        std::stringstream buf;
        buf << in.rdbuf();
        summaries.push_back(fedsim::RunSummary::from_json(buf.str()));
    }
    const auto report = fedsim::compare_report(summaries);
    std::cout << report.table;
    if (!csv_out.empty()) {
        std::ofstream out(csv_out);
        if (!out) throw fedsim::IoError("cannot write " + csv_out);
        out << report.csv;
        std::cout << "csv written to " << csv_out << "\n";
    }
    return 0;
}

int dump_data_command(const std::string& config_path,
                      const std::vector<std::string>& overrides, const std::string& out_dir) {
    const auto cfg = load_with_overrides(config_path, overrides);
    fedsim::dump_dataset(cfg, out_dir);
    std::cout << "dataset written to " << out_dir << "\n";
    return 0;
}

int bn_stats_command(const std::string& config_path,
                     const std::vector<std::string>& overrides, std::size_t layer,
                     const std::string& csv_out) {
    const auto cfg = load_with_overrides(config_path, overrides);
    const auto report = fedsim::collect_bn_stats(cfg, layer);
    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!csv_out.empty()) {
        file.open(csv_out);
        if (!file) throw fedsim::IoError("cannot write " + csv_out);
        out = &file;
    }
    (*out) << "layer,client_id,channel,running_mean,running_var\n";
    for (std::size_t k = 0; k < report.client_ids.size(); ++k) {
        for (std::size_t c = 0; c < report.running_mean[k].size(); ++c) {
            (*out) << report.layer_index << "," << report.client_ids[k] << "," << c << ","
                   << report.running_mean[k][c] << "," << report.running_var[k][c] << "\n";
        }
    }
    if (!csv_out.empty()) std::cout << "bn stats written to " << csv_out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fedsim: federated learning simulator with normalization-free training"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::vector<std::string> summary_paths;
    std::string out_path;
    std::size_t layer = 1;

    auto* run = app.add_subcommand("run", "run an experiment from a config file");
    run->add_option("config", config_path, "config json path")->required();
    run->add_option("--set", overrides, "override config fields, key=value");

    auto* report = app.add_subcommand("report", "compare run summaries side by side");
    report->add_option("summaries", summary_paths, "summary.json paths")->required();
    report->add_option("--csv", out_path, "also write the table as csv");

    auto* dump = app.add_subcommand("dump-data", "write the generated dataset to disk");
    dump->add_option("config", config_path, "config json path")->required();
    dump->add_option("--set", overrides, "override config fields, key=value");
    dump->add_option("--out", out_path, "output directory")->required();

    auto* bn = app.add_subcommand("bn-stats", "per-client batch-norm statistics report");
    bn->add_option("config", config_path, "config json path")->required();
    bn->add_option("--set", overrides, "override config fields, key=value");
    bn->add_option("--layer", layer, "bn stage index (1-3)")->default_val(1);
    bn->add_option("--csv", out_path, "write the report as csv");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return run_command(config_path, overrides);
        if (report->parsed()) return report_command(summary_paths, out_path);
        if (dump->parsed()) return dump_data_command(config_path, overrides, out_path);
        if (bn->parsed()) return bn_stats_command(config_path, overrides, layer, out_path);
    } catch (const fedsim::Error& e) {
        nlohmann::json err;
        err["error"] = e.category();
        err["message"] = e.what();
        std::cerr << err.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        nlohmann::json err;
        err["error"] = "Internal";
        err["message"] = e.what();
        std::cerr << err.dump() << "\n";
        return 2;
    }
    return 0;
}
