#include "fedsim/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace fedsim {

const char* algorithm_name(Algorithm a) {
    switch (a) {
        case Algorithm::FedAvg: return "fedavg";
        case Algorithm::FedProx: return "fedprox";
        case Algorithm::FedAvgGN: return "fedavg_gn";
        case Algorithm::FedAvgLN: return "fedavg_ln";
        case Algorithm::FedBN: return "fedbn";
        case Algorithm::SiloBN: return "silobn";
        case Algorithm::FixBN: return "fixbn";
        case Algorithm::FedWon: return "fedwon";
    }
    return "?";
}

Algorithm algorithm_from_name(const std::string& name) {
    if (name == "fedavg") return Algorithm::FedAvg;
    if (name == "fedprox") return Algorithm::FedProx;
    if (name == "fedavg_gn") return Algorithm::FedAvgGN;
    if (name == "fedavg_ln") return Algorithm::FedAvgLN;
    if (name == "fedbn") return Algorithm::FedBN;
    if (name == "silobn") return Algorithm::SiloBN;
    if (name == "fixbn") return Algorithm::FixBN;
    if (name == "fedwon") return Algorithm::FedWon;
    throw ParseError("unknown algorithm '" + name + "'");
}

Variant variant_for(Algorithm a) {
    switch (a) {
        case Algorithm::FedAvgGN: return Variant::GN;
        case Algorithm::FedAvgLN: return Variant::LN;
        case Algorithm::FedWon: return Variant::WSConv;
        default: return Variant::BN;
    }
}

bool is_stateful(Algorithm a) { return a == Algorithm::FedBN || a == Algorithm::SiloBN; }

bool is_bn_based(Algorithm a) { return variant_for(a) == Variant::BN; }

Variant AlgorithmSpec::model_variant() const {
    if (kind == Algorithm::FedWon && !ws_enabled) return Variant::Plain;
    return variant_for(kind);
}

std::vector<std::size_t> sample_clients(std::size_t total, double fraction,
                                        RngStream& stream) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw InvalidFraction("client fraction " + std::to_string(fraction));
    }
    if (total == 0) throw InvalidCounts("no clients");
    std::size_t k = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(total)));
    k = std::max<std::size_t>(1, std::min(k, total));

    std::vector<std::size_t> ids(total);
    for (std::size_t i = 0; i < total; ++i) ids[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + stream.uniform_below(total - i);
        std::swap(ids[i], ids[j]);
    }
    ids.resize(k);
    std::sort(ids.begin(), ids.end());
    return ids;
}

KeyPartition partition_params(const ModelState& state, Algorithm kind) {
    auto is_norm_role = [](ParamRole r) {
        return r == ParamRole::NormGamma || r == ParamRole::NormBeta ||
               r == ParamRole::NormRunningStat;
    };

    if (kind == Algorithm::FedBN || kind == Algorithm::SiloBN) {
        const bool has_norm_entries =
            std::any_of(state.entries.begin(), state.entries.end(),
                        [&](const auto& kv) { return is_norm_role(kv.second.role); });
        if (!has_norm_entries) {
            throw VariantMismatch(std::string(algorithm_name(kind)) + " over a '" +
                                  variant_name(state.variant) + "' model with no norm entries");
        }
        if (kind == Algorithm::SiloBN && state.variant != Variant::BN) {
            throw VariantMismatch("silobn requires batch-norm running statistics");
        }
    }

    KeyPartition part;
    for (const auto& [name, entry] : state.entries) {
        bool local = false;
        if (kind == Algorithm::FedBN) {
            local = is_norm_role(entry.role);
        } else if (kind == Algorithm::SiloBN) {
            local = entry.role == ParamRole::NormRunningStat;
        }
        (local ? part.local_keys : part.shared_keys).push_back(name);
    }
    return part;
}

BnStatsMode fixbn_apply(const ModelState& model, std::size_t round,
                        std::size_t freeze_round) {
    if (model.variant != Variant::BN) {
        throw VariantMismatch("fixbn over a '" + std::string(variant_name(model.variant)) +
                              "' model");
    }
    return round < freeze_round ? BnStatsMode::Batch : BnStatsMode::Frozen;
}

LocalTrainResult local_train(ClientState& client, const ModelState& global,
                             const AlgorithmSpec& algo, const Cnn6& model,
                             std::size_t epochs, std::size_t batch_size, std::size_t round,
                             RngStream stream) {
    if (client.shard.samples.empty()) {
        throw EmptyShard("client " + std::to_string(client.id) + " has no samples");
    }
    if (batch_size < 1) throw InvalidCounts("batch size must be >= 1");
    if (is_bn_based(algo.kind) && batch_size < 2) {
        throw DegenerateBatch("batch-norm training requires batch size >= 2, got " +
                              std::to_string(batch_size));
    }

    // Start model: received global with the client's private entries spliced.
    ModelState working = global;
    for (const auto& [name, value] : client.local_overlay) {
        working.value(name) = value;
    }
    const ModelState start = working;  // FedProx anchor

    const BnStatsMode bn_mode = (algo.kind == Algorithm::FixBN)
                                    ? fixbn_apply(working, round, algo.freeze_round)
                                    : BnStatsMode::Batch;

    const auto& samples = client.shard.samples;
    const std::size_t n = samples.size();
    const std::size_t C = samples[0].x.dim(0), H = samples[0].x.dim(1),
                      W = samples[0].x.dim(2);

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        auto perm = stream.split("epoch", epoch).permutation(n);
        for (std::size_t off = 0; off < n; off += batch_size) {
            const std::size_t b = std::min(batch_size, n - off);
            Batch batch;
            batch.x = Tensor({b, C, H, W});
            batch.labels.resize(b);
            for (std::size_t i = 0; i < b; ++i) {
                const Sample& s = samples[perm[off + i]];
                std::copy(s.x.data(), s.x.data() + s.x.size(),
                          batch.x.data() + i * s.x.size());
                batch.labels[i] = s.label;
            }

            RngStream fwd_stream = stream.split("step", step++);
            ForwardResult fwd =
                model.forward_loss(working, batch, Mode::Train, fwd_stream, bn_mode);
            for (auto& [name, value] : fwd.stat_updates) {
                working.value(name) = std::move(value);
            }
            GradientMap grads = model.backward(working, fwd.cache);
            working = sgd_step(working, grads, algo.optim,
                               algo.optim.prox_mu > 0.0 ? &start : nullptr);

            loss_sum += fwd.loss * static_cast<double>(b);
            loss_count += b;
        }
    }

    if (is_stateful(algo.kind)) {
        const KeyPartition part = partition_params(working, algo.kind);
        client.local_overlay.clear();
        for (const auto& key : part.local_keys) {
            client.local_overlay.emplace(key, working.value(key));
        }
    }

    LocalTrainResult res;
    res.update = std::move(working);
    res.n_samples = n;
    res.mean_loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0;
    return res;
}

ModelState aggregate(const std::vector<std::pair<ModelState, std::size_t>>& updates,
                     const std::vector<std::string>& shared_keys,
                     const ModelState& prev_global) {
    if (updates.empty()) throw EmptyUpdateSet("aggregate got no updates");
    double total = 0.0;
    for (const auto& [state, n] : updates) {
        total += static_cast<double>(n);
        if (state.arch_id != prev_global.arch_id || state.variant != prev_global.variant) {
            throw ShapeMismatch("aggregate: update arch/variant mismatch");
        }
    }
    if (total <= 0.0) throw EmptyUpdateSet("aggregate got zero total samples");

    ModelState result = prev_global;
    for (const auto& key : shared_keys) {
        Tensor& out = result.value(key);
        Tensor acc(out.shape());
        for (const auto& [state, n] : updates) {
            const Tensor& v = state.value(key);
            if (!v.same_shape(out)) {
                throw ShapeMismatch("aggregate: '" + key + "' shape " +
                                    shape_str(v.shape()));
            }
            const double p = static_cast<double>(n) / total;
            const double* vp = v.data();
            double* ap = acc.data();
            for (std::size_t i = 0; i < acc.size(); ++i) ap[i] += p * vp[i];
        }
        out = std::move(acc);
    }
    return result;
}

double evaluate_shard(const Cnn6& model, const ModelState& state, const Shard& shard,
                      std::size_t eval_batch) {
    if (shard.samples.empty()) throw EmptyShard("evaluation shard is empty");
    const auto& samples = shard.samples;
    const std::size_t C = samples[0].x.dim(0), H = samples[0].x.dim(1),
                      W = samples[0].x.dim(2);
    std::size_t hits = 0;
    RngStream unused(0);
    for (std::size_t off = 0; off < samples.size(); off += eval_batch) {
        const std::size_t b = std::min(eval_batch, samples.size() - off);
        Batch batch;
        batch.x = Tensor({b, C, H, W});
        batch.labels.resize(b);
        for (std::size_t i = 0; i < b; ++i) {
            const Sample& s = samples[off + i];
            std::copy(s.x.data(), s.x.data() + s.x.size(), batch.x.data() + i * s.x.size());
            batch.labels[i] = s.label;
        }
        ForwardResult fwd = model.forward_loss(state, batch, Mode::Eval, unused);
        hits += static_cast<std::size_t>(
            std::llround(accuracy(fwd.logits, batch.labels) * static_cast<double>(b)));
    }
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

Federation::Federation(Cnn6 model, AlgorithmSpec algo, ModelState global,
                       std::vector<ClientState> clients, std::vector<Shard> domain_tests,
                       std::size_t local_epochs, std::size_t batch_size,
                       double client_fraction)
    : model_(std::move(model)),
      algo_(algo),
      global_(std::move(global)),
      clients_(std::move(clients)),
      domain_tests_(std::move(domain_tests)),
      local_epochs_(local_epochs),
      batch_size_(batch_size),
      client_fraction_(client_fraction) {
    if (is_stateful(algo_.kind) && client_fraction_ < 1.0) {
        throw ConstraintViolation(std::string(algorithm_name(algo_.kind)) +
                                  " is stateful and requires full participation (C = 1)");
    }
}

ClientState& Federation::client_by_id(std::size_t id) {
    for (auto& c : clients_) {
        if (c.id == id) return c;
    }
    throw InvalidCounts("no client with id " + std::to_string(id));
}

ModelState Federation::eval_state_for_domain(std::size_t domain_id) const {
    if (!is_stateful(algo_.kind)) return global_;
    const ClientState* owner = nullptr;
    for (const auto& c : clients_) {
        if (c.domain_id == domain_id && (owner == nullptr || c.id < owner->id)) {
            owner = &c;
        }
    }
    ModelState state = global_;
    if (owner != nullptr) {
        for (const auto& [name, value] : owner->local_overlay) {
            state.value(name) = value;
        }
    }
    return state;
}

RoundRecord Federation::run_round(std::size_t round, RngStream round_stream) {
    const auto t0 = std::chrono::steady_clock::now();

    RngStream sampler = round_stream.split("sample");
    std::vector<std::size_t> participants =
        sample_clients(clients_.size(), client_fraction_, sampler);

    // Per-client streams derive from (round stream, client id) alone, so the
    // outcome cannot depend on execution order.
    std::vector<std::pair<ModelState, std::size_t>> updates;
    updates.reserve(participants.size());
    double loss_sum = 0.0;
    double weight_sum = 0.0;
    for (std::size_t id : participants) {
        ClientState& client = client_by_id(id);
        LocalTrainResult res =
            local_train(client, global_, algo_, model_, local_epochs_, batch_size_, round,
                        round_stream.split("client", id));
        loss_sum += res.mean_loss * static_cast<double>(res.n_samples);
        weight_sum += static_cast<double>(res.n_samples);
        updates.emplace_back(std::move(res.update), res.n_samples);
    }

    const KeyPartition part = partition_params(global_, algo_.kind);
    global_ = aggregate(updates, part.shared_keys, global_);

    RoundRecord record;
    record.round = round;
    record.participants = participants;
    record.mean_train_loss = weight_sum > 0.0 ? loss_sum / weight_sum : 0.0;
    double acc_sum = 0.0;
    for (const auto& test : domain_tests_) {
        const ModelState eval_state = eval_state_for_domain(test.domain_id);
        const double acc = evaluate_shard(model_, eval_state, test);
        record.per_domain_accuracy.push_back(acc);
        acc_sum += acc;
    }
    record.mean_accuracy =
        domain_tests_.empty() ? 0.0 : acc_sum / static_cast<double>(domain_tests_.size());
    record.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return record;
}

BnStatsReport bn_stats_report(const std::vector<std::pair<std::size_t, ModelState>>& states,
                              std::size_t layer_index) {
    BnStatsReport report;
    report.layer_index = layer_index;
    const std::string mean_key = "norm" + std::to_string(layer_index) + ".running_mean";
    const std::string var_key = "norm" + std::to_string(layer_index) + ".running_var";
    for (const auto& [id, state] : states) {
        if (state.variant != Variant::BN || !state.has(mean_key)) {
            throw VariantMismatch("bn_stats_report: client " + std::to_string(id) +
                                  " carries no batch-norm layer " +
                                  std::to_string(layer_index));
        }
        const Tensor& mean = state.value(mean_key);
        const Tensor& var = state.value(var_key);
        report.client_ids.push_back(id);
        report.running_mean.emplace_back(mean.values());
        report.running_var.emplace_back(var.values());
    }
    return report;
}

double bn_stats_gap(const BnStatsReport& report, std::size_t a, std::size_t b) {
    const auto& ma = report.running_mean.at(a);
    const auto& mb = report.running_mean.at(b);
    if (ma.size() != mb.size()) throw ShapeMismatch("bn_stats_gap: channel count mismatch");
    double gap = 0.0;
    for (std::size_t c = 0; c < ma.size(); ++c) gap += std::abs(ma[c] - mb[c]);
    return gap / static_cast<double>(ma.size());
}

}  // namespace fedsim
