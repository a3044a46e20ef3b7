// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "fedprov/data.hpp"
#include "fedprov/model.hpp"

namespace fedprov {

// Raised when local training goes numerically bad (NaN loss aborts a round).
class TrainingError : public std::runtime_error {
public:
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FederationConfig {
    int num_clients = 6;
    int rounds = 10;
    int clients_per_round = 6;
    int local_epochs = 1;
    int batch_size = 16;
    double learning_rate = 5e-5;
    double weight_decay = 0.001;
    int samples_per_client = 256;
    uint64_t seed = 0;

    void validate() const;
};

// FedAvg coefficients over the round's participants, proportional to
// dataset size and renormalized to sum to one.
struct AggregationWeights {
    std::vector<double> rho;

    static AggregationWeights from_sizes(const std::vector<int64_t>& sizes);
    void validate() const;
};

// Seed-deterministic disjoint split: shuffled corpus, contiguous chunks of
// samples_per_client per client.
std::vector<ClientDataset> partition(const std::vector<Example>& corpus,
                                     const FederationConfig& cfg);

struct LocalTrainResult {
    ParameterSet params;
    double mean_loss = 0.0;  // over the final local epoch
};

// AdamW (beta1 0.9, beta2 0.999, eps 1e-8) on masked next-token
// cross-entropy. Optimizer state is fresh per call; batch order is
// seed-deterministic. local_epochs == 0 returns `start` unchanged.
LocalTrainResult local_train(const ParameterSet& start, const ClientDataset& data,
                             const FederationConfig& cfg, uint64_t seed);

ParameterSet fedavg(const std::vector<ParameterSet>& clients, const AggregationWeights& weights);

struct RoundResult {
    ParameterSet global;
    std::vector<int> participants;            // sorted client ids
    std::vector<ParameterSet> client_models;  // aligned with participants
    AggregationWeights weights;
    std::vector<double> client_losses;
};

// One federated round: sample participants, train each from the incoming
// global, aggregate, and checkpoint global plus every participant model
// under <run_dir>/round_<r>/. An empty run_dir skips the writes.
RoundResult run_round(const ParameterSet& global, const std::vector<ClientDataset>& datasets,
                      const FederationConfig& cfg, int round_index, const std::string& run_dir);

// Round entries appended to <run_dir>/weights.json.
void append_round_weights(const std::string& run_dir, int round_index,
                          const std::vector<int>& participants, const AggregationWeights& weights);

}  // namespace fedprov
