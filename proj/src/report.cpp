#include "fedsim/report.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace fedsim {

namespace {

std::pair<double, double> mean_std(const std::vector<double>& values) {
    const double n = static_cast<double>(values.size());
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / n;
    double sq = 0.0;
    for (double v : values) sq += (v - mean) * (v - mean);
    return {mean, std::sqrt(sq / n)};
}

}  // namespace

RunSummary summarize(std::string name, std::string algorithm, std::string fingerprint,
                     std::vector<std::uint64_t> seeds,
                     std::vector<std::vector<double>> per_seed_domain_acc) {
    if (per_seed_domain_acc.empty() || per_seed_domain_acc.size() != seeds.size()) {
        throw InvalidCounts("summarize: one accuracy row per seed required");
    }
    RunSummary s;
    s.name = std::move(name);
    s.algorithm = std::move(algorithm);
    s.dataset_fingerprint = std::move(fingerprint);
    s.seeds = std::move(seeds);
    s.per_seed_domain_acc = std::move(per_seed_domain_acc);

    const std::size_t domains = s.per_seed_domain_acc[0].size();
    for (std::size_t d = 0; d < domains; ++d) {
        std::vector<double> col;
        for (const auto& row : s.per_seed_domain_acc) {
            if (row.size() != domains) {
                throw InvalidCounts("summarize: ragged accuracy rows");
            }
            col.push_back(row[d]);
        }
        const auto [m, sd] = mean_std(col);
        s.domain_mean.push_back(m);
        s.domain_std.push_back(sd);
    }
    std::vector<double> per_seed_mean;
    for (const auto& row : s.per_seed_domain_acc) {
        double sum = 0.0;
        for (double v : row) sum += v;
        per_seed_mean.push_back(sum / static_cast<double>(domains));
    }
    const auto [m, sd] = mean_std(per_seed_mean);
    s.overall_mean = m;
    s.overall_std = sd;
    return s;
}

std::string RunSummary::to_json() const {
    nlohmann::json j;
    j["format"] = "fedsim-summary";
    j["name"] = name;
    j["algorithm"] = algorithm;
    j["dataset_fingerprint"] = dataset_fingerprint;
    j["seeds"] = seeds;
    j["per_seed_domain_acc"] = per_seed_domain_acc;
    j["domain_mean"] = domain_mean;
    j["domain_std"] = domain_std;
    j["overall_mean"] = overall_mean;
    j["overall_std"] = overall_std;
    j["std_form"] = "population";
    return j.dump(2);
}

RunSummary RunSummary::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("summary json: ") + e.what());
    }
    if (j.value("format", "") != "fedsim-summary") throw ParseError("not a summary file");
    RunSummary s;
    s.name = j.at("name").get<std::string>();
    s.algorithm = j.at("algorithm").get<std::string>();
    s.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
    s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    s.per_seed_domain_acc = j.at("per_seed_domain_acc").get<std::vector<std::vector<double>>>();
    s.domain_mean = j.at("domain_mean").get<std::vector<double>>();
    s.domain_std = j.at("domain_std").get<std::vector<double>>();
    s.overall_mean = j.at("overall_mean").get<double>();
    s.overall_std = j.at("overall_std").get<double>();
    return s;
}

ComparisonReport compare_report(const std::vector<RunSummary>& summaries) {
    if (summaries.empty()) throw InvalidCounts("compare_report needs at least one summary");
    const std::string& fp = summaries[0].dataset_fingerprint;
    const std::size_t domains = summaries[0].domain_mean.size();
    for (const auto& s : summaries) {
        if (s.dataset_fingerprint != fp) {
            throw FingerprintMismatch("summary '" + s.name + "' has fingerprint " +
                                      s.dataset_fingerprint + ", expected " + fp);
        }
        if (s.domain_mean.size() != domains) {
            throw FingerprintMismatch("summary '" + s.name + "' has a different domain count");
        }
    }

    auto cell = [](double mean, double sd) {
        std::ostringstream os;
        os << std::fixed << std::setprecision(1) << mean * 100.0 << " (" << sd * 100.0
           << ")";
        return os.str();
    };

    std::ostringstream table, csv;
    constexpr int kColWidth = 16;
    table << std::left << std::setw(kColWidth) << "Domain";
    csv << "row";
    for (const auto& s : summaries) {
        table << std::setw(kColWidth) << s.name;
        csv << "," << s.name << "_mean," << s.name << "_std";
    }
    table << "\n";
    csv << "\n";

    for (std::size_t d = 0; d <= domains; ++d) {
        const bool avg_row = (d == domains);
        table << std::setw(kColWidth) << (avg_row ? "Average" : "domain" + std::to_string(d));
        csv << (avg_row ? "Average" : "domain" + std::to_string(d));
        for (const auto& s : summaries) {
            const double mean = avg_row ? s.overall_mean : s.domain_mean[d];
            const double sd = avg_row ? s.overall_std : s.domain_std[d];
            table << std::setw(kColWidth) << cell(mean, sd);
            csv << "," << std::setprecision(17) << mean << "," << sd;
        }
        table << "\n";
        csv << "\n";
    }
    return {table.str(), csv.str()};
}

}  // namespace fedsim
