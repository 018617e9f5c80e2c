#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "fedsim/datagen.hpp"
#include "fedsim/model.hpp"
#include "fedsim/optim.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

enum class Algorithm { FedAvg, FedProx, FedAvgGN, FedAvgLN, FedBN, SiloBN, FixBN, FedWon };

const char* algorithm_name(Algorithm a);
Algorithm algorithm_from_name(const std::string& name);

// Model variant implied by the algorithm.
Variant variant_for(Algorithm a);

// FedBN and SiloBN retain client-local entries between rounds; they demand
// full participation every round (cross-silo only).
bool is_stateful(Algorithm a);
bool is_bn_based(Algorithm a);

struct AlgorithmSpec {
    Algorithm kind = Algorithm::FedAvg;
    OptimSpec optim;
    std::size_t freeze_round = 0;  // FixBN: statistics freeze at this round
    bool ws_enabled = true;        // FedWon ablation arm: plain conv when false

    Variant model_variant() const;
};

struct ClientState {
    std::size_t id = 0;
    std::size_t domain_id = 0;
    Shard shard;  // train split
    // Entries the client keeps private under its algorithm; empty for
    // stateless algorithms.
    std::map<std::string, Tensor> local_overlay;
};

struct RoundRecord {
    std::size_t round = 0;
    std::vector<std::size_t> participants;
    std::vector<double> per_domain_accuracy;
    double mean_accuracy = 0.0;
    double mean_train_loss = 0.0;
    double seconds = 0.0;
};

// K = round(C*N) with a floor of 1; uniform without replacement.
std::vector<std::size_t> sample_clients(std::size_t total, double fraction,
                                        RngStream& stream);

struct KeyPartition {
    std::vector<std::string> shared_keys;
    std::vector<std::string> local_keys;
};
KeyPartition partition_params(const ModelState& state, Algorithm kind);

// round < freeze_round: batch statistics; afterwards frozen running stats
// (affines keep training). Demands a bn model.
BnStatsMode fixbn_apply(const ModelState& model, std::size_t round,
                        std::size_t freeze_round);

struct LocalTrainResult {
    ModelState update;
    std::size_t n_samples = 0;
    double mean_loss = 0.0;
};

// E epochs of shuffled mini-batch SGD starting from the received global
// with the client's overlay spliced in; stateful algorithms refresh their
// overlay from the trained state.
LocalTrainResult local_train(ClientState& client, const ModelState& global,
                             const AlgorithmSpec& algo, const Cnn6& model,
                             std::size_t epochs, std::size_t batch_size, std::size_t round,
                             RngStream stream);

// Weighted mean with p_k = n_k / sum(n_k) over the shared keys; everything
// else is carried over from the previous global.
ModelState aggregate(const std::vector<std::pair<ModelState, std::size_t>>& updates,
                     const std::vector<std::string>& shared_keys,
                     const ModelState& prev_global);

double evaluate_shard(const Cnn6& model, const ModelState& state, const Shard& shard,
                      std::size_t eval_batch = 128);

// Server loop state: global model, clients, per-domain test shards.
class Federation {
public:
    Federation(Cnn6 model, AlgorithmSpec algo, ModelState global,
               std::vector<ClientState> clients, std::vector<Shard> domain_tests,
               std::size_t local_epochs, std::size_t batch_size, double client_fraction);

    RoundRecord run_round(std::size_t round, RngStream round_stream);

    const ModelState& global() const { return global_; }
    const std::vector<ClientState>& clients() const { return clients_; }
    std::vector<ClientState>& clients() { return clients_; }
    const Cnn6& model() const { return model_; }
    const AlgorithmSpec& algo() const { return algo_; }

    // Model a domain's owner sees at evaluation time: the global state with
    // the overlay of the domain's lowest-id client spliced in (stateful
    // algorithms only).
    ModelState eval_state_for_domain(std::size_t domain_id) const;

private:
    ClientState& client_by_id(std::size_t id);

    Cnn6 model_;
    AlgorithmSpec algo_;
    ModelState global_;
    std::vector<ClientState> clients_;
    std::vector<Shard> domain_tests_;
    std::size_t local_epochs_;
    std::size_t batch_size_;
    double client_fraction_;
};

struct BnStatsReport {
    std::size_t layer_index = 0;
    std::vector<std::size_t> client_ids;
    std::vector<std::vector<double>> running_mean;  // [client][channel]
    std::vector<std::vector<double>> running_var;
};

// Channel-wise running statistics of the given BN layer (1-based stage
// index), aligned across clients.
BnStatsReport bn_stats_report(const std::vector<std::pair<std::size_t, ModelState>>& states,
                              std::size_t layer_index);

// Mean absolute channel-wise gap between two clients' running means.
double bn_stats_gap(const BnStatsReport& report, std::size_t a, std::size_t b);

}  // namespace fedsim
