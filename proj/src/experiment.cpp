#include "fedsim/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "fedsim/serialize.hpp"

namespace fedsim {

namespace {

std::vector<ClientState> build_clients(const ExperimentConfig& cfg,
                                       const std::vector<DomainData>& data,
                                       RngStream stream) {
    std::vector<ClientState> clients;
    if (cfg.dataset.partition == "domain") {
        auto shards = domain_partition(data, cfg.dataset.clients_per_domain, stream);
        clients.reserve(shards.size());
        for (std::size_t i = 0; i < shards.size(); ++i) {
            ClientState c;
            c.id = i;
            c.domain_id = shards[i].domain_id;
            c.shard = std::move(shards[i]);
            clients.push_back(std::move(c));
        }
        return clients;
    }

    // iid / dirichlet: pool every domain's train samples, partition by index.
    std::vector<Sample> pool;
    for (const auto& dd : data) {
        pool.insert(pool.end(), dd.train.samples.begin(), dd.train.samples.end());
    }
    std::vector<std::size_t> labels(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) labels[i] = pool[i].label;

    std::vector<std::vector<std::size_t>> lists;
    if (cfg.dataset.partition == "iid") {
        lists = iid_partition(labels, cfg.dataset.num_clients, stream);
    } else {
        lists = dirichlet_partition(labels, cfg.dataset.num_clients, cfg.dataset.alpha,
                                    stream);
    }

    clients.reserve(lists.size());
    for (std::size_t k = 0; k < lists.size(); ++k) {
        ClientState c;
        c.id = k;
        c.shard.split = Split::Train;
        std::map<std::size_t, std::size_t> domain_counts;
        for (std::size_t idx : lists[k]) {
            c.shard.samples.push_back(pool[idx]);
            domain_counts[pool[idx].domain_id] += 1;
        }
        std::size_t best_domain = 0, best_count = 0;
        for (const auto& [d, count] : domain_counts) {
            if (count > best_count) {
                best_domain = d;
                best_count = count;
            }
        }
        c.domain_id = best_domain;
        c.shard.domain_id = best_domain;
        clients.push_back(std::move(c));
    }
    return clients;
}

}  // namespace

SeedSetup build_seed_setup(const ExperimentConfig& cfg, std::uint64_t seed) {
    RngStream root(seed);
    auto data = gen_domains(cfg.datagen_config(), root.split("data"));
    SeedSetup setup{Cnn6(cfg.model_spec()),
                    ModelState{},
                    build_clients(cfg, data, root.split("partition")),
                    {}};
    setup.global = setup.model.init_state(root.split("init"));
    for (auto& dd : data) setup.domain_tests.push_back(std::move(dd.test));
    return setup;
}

std::string csv_header(std::size_t num_domains) {
    std::string h = "round,client_ids";
    for (std::size_t d = 0; d < num_domains; ++d) {
        h += ",acc_domain" + std::to_string(d);
    }
    h += ",mean_acc,mean_loss,seconds";
    return h;
}

std::string csv_row(const RoundRecord& record, bool timing) {
    std::ostringstream os;
    os << record.round << ",";
    for (std::size_t i = 0; i < record.participants.size(); ++i) {
        if (i) os << "|";
        os << record.participants[i];
    }
    char buf[64];
    for (double acc : record.per_domain_accuracy) {
        std::snprintf(buf, sizeof(buf), ",%.6f", acc);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.6f", record.mean_accuracy);
    os << buf;
    std::snprintf(buf, sizeof(buf), ",%.9g", record.mean_train_loss);
    os << buf;
    std::snprintf(buf, sizeof(buf), ",%.3f", timing ? record.seconds : 0.0);
    os << buf;
    return os.str();
}

ExperimentOutput run_experiment(const ExperimentConfig& cfg,
                                const std::filesystem::path& output_root) {
    namespace fs = std::filesystem;
    const fs::path run_dir = output_root / cfg.output_dir / cfg.name;
    fs::create_directories(run_dir);
    {
        std::ofstream out(run_dir / "resolved_config.json");
        if (!out) throw IoError("cannot write " + (run_dir / "resolved_config.json").string());
        out << cfg.resolved_json() << "\n";
    }

    ExperimentOutput output;
    output.run_dir = run_dir;
    std::vector<std::vector<double>> per_seed_acc;

    for (std::uint64_t seed : cfg.seeds) {
        SeedSetup setup = [&] {
            try {
                return build_seed_setup(cfg, seed);
            } catch (const Error& e) {
                throw Error(e.category(), "seed " + std::to_string(seed) + ": " + e.what());
            }
        }();
        const std::size_t num_domains = setup.domain_tests.size();

        const fs::path seed_dir = run_dir / ("seed" + std::to_string(seed));
        fs::create_directories(seed_dir);
        std::ofstream csv(seed_dir / "rounds.csv");
        if (!csv) throw IoError("cannot write " + (seed_dir / "rounds.csv").string());
        csv << csv_header(num_domains) << "\n";

        Federation fed(setup.model, cfg.algorithm_spec(), std::move(setup.global),
                       std::move(setup.clients), std::move(setup.domain_tests),
                       cfg.federation.local_epochs, cfg.federation.batch_size,
                       cfg.federation.client_fraction);

        RngStream root(seed);
        std::vector<RoundRecord> records;
        for (std::size_t r = 0; r < cfg.federation.rounds; ++r) {
            RoundRecord rec;
            try {
                rec = fed.run_round(r, root.split("round", r));
            } catch (const Error& e) {
                throw Error(e.category(), "round " + std::to_string(r) + ", seed " +
                                              std::to_string(seed) + ": " + e.what());
            }
            csv << csv_row(rec, cfg.timing) << "\n";
            records.push_back(rec);
            const std::size_t interval = cfg.federation.checkpoint_interval;
            if (interval > 0 && (r + 1) % interval == 0) {
                checkpoint_save(seed_dir / ("checkpoint_round" + std::to_string(r) + ".json"),
                                fed.global());
            }
        }
        checkpoint_save(seed_dir / "checkpoint_final.json", fed.global());

        std::vector<double> final_acc;
        if (!records.empty()) {
            final_acc = records.back().per_domain_accuracy;
        } else {
            // rounds = 0: the summary is the initial model's evaluation.
            SeedSetup fresh = build_seed_setup(cfg, seed);
            for (const auto& test : fresh.domain_tests) {
                final_acc.push_back(evaluate_shard(fresh.model, fresh.global, test));
            }
        }
        per_seed_acc.push_back(std::move(final_acc));
        output.per_seed_records.push_back(std::move(records));
    }

    output.summary = summarize(cfg.name, cfg.federation.algorithm,
                               cfg.dataset_fingerprint(), cfg.seeds, per_seed_acc);
    {
        std::ofstream out(run_dir / "summary.json");
        if (!out) throw IoError("cannot write " + (run_dir / "summary.json").string());
        out << output.summary.to_json() << "\n";
    }
    return output;
}

BnStatsReport collect_bn_stats(const ExperimentConfig& cfg, std::size_t layer_index) {
    const AlgorithmSpec algo = cfg.algorithm_spec();
    if (algo.model_variant() != Variant::BN) {
        throw VariantMismatch("bn statistics require a batch-norm algorithm, got " +
                              cfg.federation.algorithm);
    }
    const std::uint64_t seed = cfg.seeds.at(0);
    SeedSetup setup = build_seed_setup(cfg, seed);
    Federation fed(setup.model, algo, std::move(setup.global), std::move(setup.clients),
                   std::move(setup.domain_tests), cfg.federation.local_epochs,
                   cfg.federation.batch_size, cfg.federation.client_fraction);
    RngStream root(seed);
    for (std::size_t r = 0; r < cfg.federation.rounds; ++r) {
        fed.run_round(r, root.split("round", r));
    }

    // One more local pass per client so every client's statistics reflect
    // its own shard against the final global.
    std::vector<std::pair<std::size_t, ModelState>> states;
    RngStream extra = root.split("bn-stats");
    for (auto& client : fed.clients()) {
        LocalTrainResult res =
            local_train(client, fed.global(), fed.algo(), fed.model(),
                        std::max<std::size_t>(1, cfg.federation.local_epochs),
                        cfg.federation.batch_size, cfg.federation.rounds,
                        extra.split("client", client.id));
        states.emplace_back(client.id, std::move(res.update));
    }
    return bn_stats_report(states, layer_index);
}

void dump_dataset(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const std::uint64_t seed = cfg.seeds.at(0);
    SeedSetup setup = build_seed_setup(cfg, seed);

    std::vector<ManifestEntry> manifest;
    for (const auto& client : setup.clients) {
        const std::string file = "client" + std::to_string(client.id) + "_train.bin";
        shard_save(out_dir / file, client.shard);
        manifest.push_back({file, client.shard.domain_id, "train",
                            client.shard.samples.size()});
    }
    for (const auto& test : setup.domain_tests) {
        const std::string file = "domain" + std::to_string(test.domain_id) + "_test.bin";
        shard_save(out_dir / file, test);
        manifest.push_back({file, test.domain_id, "test", test.samples.size()});
    }
    manifest_save(out_dir / "manifest.txt", manifest);
}

}  // namespace fedsim
