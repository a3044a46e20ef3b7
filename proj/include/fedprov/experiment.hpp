// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "fedprov/backdoor.hpp"
#include "fedprov/federation.hpp"
#include "fedprov/model.hpp"
#include "fedprov/provenance.hpp"

namespace fedprov {

struct BackdoorConfig {
    std::string trigger_text = kDefaultTriggerText;
    std::string sentinel_text = kDefaultSentinelText;
    std::vector<int> malicious_clients;
    double poison_fraction = 1.0;

    BackdoorSpec to_spec() const;
};

// One file fully determines a run. Serialized as versioned JSON.
struct ExperimentConfig {
    ModelConfig model;
    FederationConfig federation;
    BackdoorConfig backdoor;
    int last_n_blocks = 0;  // 0 means every block
    int probes = 32;
    int max_new_tokens = 96;
    std::vector<std::string> domains = {"arith", "kv", "strings"};
    bool ablation = false;
    bool layer_sweep = false;
    bool rho_weighted_scores = false;
    std::string output_dir = "runs/run";

    void validate() const;
    int effective_last_n() const;
};

ExperimentConfig load_experiment_config(const std::string& path);
void save_experiment_config(const ExperimentConfig& cfg, const std::string& path);

// Teacher-forced next-token accuracy over masked response positions.
double token_accuracy(const ParameterSet& params, const std::vector<Example>& eval_set);

// Domain-flavored client data: domain tags cycle over client ids and each
// domain's corpus is partitioned among the clients assigned to it.
std::vector<ClientDataset> build_client_datasets(const ExperimentConfig& cfg);

// Triggered probe prompts drawn from the poisoned clients' domains, with a
// seed disjoint from training synthesis.
std::vector<GroundTruthLabel> build_probes(const ExperimentConfig& cfg, const BackdoorSpec& spec);

struct ProbeEvaluation {
    std::vector<AttributionResult> results;  // aligned with the probe list
    std::vector<GroundTruthLabel> labels;    // fired flags filled in
    int fired = 0;
    int correct = 0;
    double accuracy = 0.0;  // over fired probes; 0 when none fired
    // Probability separation over fired probes: per-probe medians of the
    // responsible set pooled against all non-responsible probabilities.
    double median_responsible_prob = 0.0;
    double median_nonresponsible_prob = 0.0;
    int separated_correct = 0;  // correct probes where min separation holds
};

// Attribution of every probe against one round's participant models.
// client_ids maps ledger indices to real client ids. rho is optional
// score reweighting (off in the default pipeline).
ProbeEvaluation evaluate_probes(const ParameterSet& global,
                                const std::vector<ParameterSet>& clients,
                                const std::vector<int>& client_ids,
                                const std::vector<GroundTruthLabel>& probes,
                                const BackdoorSpec& spec, const LayerSet& layers, int max_new,
                                AttributionMode mode, const std::vector<double>* rho);

// Full pipeline: synthesize, partition, poison, train all rounds (flushing
// metrics.csv and checkpoints per round), evaluate probes, write
// attribution reports and summary.json under cfg.output_dir. With the
// ablation / layer_sweep flags set, the paired-mode comparison and the
// monitored-depth sweep are appended to the summary.
void run_experiment(const ExperimentConfig& cfg);

struct LoadedRound {
    ParameterSet global;
    std::vector<int> participants;
    std::vector<ParameterSet> client_models;
    std::vector<double> rho;
};

LoadedRound load_round(const std::string& run_dir, int round_index);
int last_round_index(const std::string& run_dir);

struct BenchRow {
    int last_n_blocks = 0;
    double per_token_ms = 0.0;        // median over repeats of the mean per token
    double per_attribution_ms = 0.0;  // median over repeats of the mean per probe
    double accuracy = 0.0;            // over fired probes at this depth
    int fired = 0;
};

// Monitored-depth sweep on an existing run's final-round checkpoints:
// wall time from repeated timed runs, accuracy from depth-restricted
// ledgers. Writes bench.csv under cfg.output_dir.
std::vector<BenchRow> bench_overhead(const ExperimentConfig& cfg,
                                     const std::vector<int>& layer_counts, int repeats);

struct AblationResult {
    double full_gradient_acc = 0.0;
    double full_activation_acc = 0.0;
    double per_layer_gradient_mean = 0.0;
    double per_layer_activation_mean = 0.0;
    double ratio = 0.0;  // per-layer gradient mean over activation mean
};

// Paired gradient-weighted vs activation-only comparison on an existing
// run's checkpoints. Writes ablation.json under cfg.output_dir.
AblationResult run_ablation(const ExperimentConfig& cfg, int round_index);

// Standalone attribution over stored probes against one stored round.
// Reports land in out_dir.
ProbeEvaluation attribute_round(const ExperimentConfig& cfg, int round_index,
                                AttributionMode mode, int last_n_blocks,
                                const std::string& out_dir);

}  // namespace fedprov
