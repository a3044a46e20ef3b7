// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "fedprov/backdoor.hpp"
#include "fedprov/model.hpp"

namespace fedprov {

// The monitored sub-layers: attention output projection and final MLP
// linear of each chosen block, shallow to deep.
struct LayerSet {
    std::vector<LayerId> layers;

    static LayerSet last_n_blocks(const ModelConfig& cfg, int n);
    static LayerSet single(LayerId id);
    void validate(const ModelConfig& cfg) const;
    size_t size() const { return layers.size(); }
};

enum class AttributionMode { GradientWeighted, ActivationOnly };

std::string to_string(AttributionMode mode);
AttributionMode attribution_mode_from_string(const std::string& s);

// One generation step's evidence: the emitted token plus per-client scores,
// both summed over the layer set and broken out per layer.
struct TokenAttribution {
    int step = 0;
    int token = 0;
    std::vector<double> per_client;               // [K]
    std::vector<std::vector<double>> per_layer;   // [K][|layers|]
};

struct ProvenanceLedger {
    int num_clients = 0;
    std::vector<LayerId> layers;
    AttributionMode mode = AttributionMode::GradientWeighted;
    std::vector<TokenAttribution> per_token;
    std::vector<double> sequence_totals;  // [K]
    std::vector<double> probabilities;    // [K], softmax of sequence_totals
    int attributed = -1;
    bool no_evidence = false;  // nothing scored before EOS
    double wall_time_ms = 0.0;

    // Checks the internal sums, probability simplex, and argmax rule.
    void check_consistent() const;
};

// Inner product of a client activation with the token gradient.
double layer_provenance(const Tensor& h_client, const Tensor& grad);

// One client's score for one token: rebuild each monitored sub-layer's
// output from the global capture's input using the client's own weights,
// then accumulate inner products with the per-layer gradients. `grads` is
// aligned with `captures`. Optionally reports the per-layer terms.
double client_token_provenance(const ParameterSet& client,
                               const std::vector<CaptureRecord>& captures,
                               const std::vector<Tensor>& grads, const LayerSet& layers,
                               std::vector<double>* per_layer_out = nullptr);

struct AttributionResult {
    std::vector<int> generated;  // greedy tokens actually scored; EOS excluded
    ProvenanceLedger ledger;
};

// The per-token attribution loop: traced global forward, greedy token,
// backward from that token's logit to every monitored sub-layer output
// (final position), per-client scoring, accumulation across the sequence,
// softmax, argmax. activation_only swaps the gradients for all-ones
// vectors; generation itself is mode-independent.
AttributionResult attribute_generation(const ParameterSet& global,
                                       const std::vector<ParameterSet>& clients,
                                       std::span<const int> prompt, const LayerSet& layers,
                                       int max_new, AttributionMode mode, int eos_id);

// Recomputes totals, probabilities, and the attributed client from an
// existing ledger restricted to a subset of its layers. Gradients do not
// depend on which layers are monitored, so this matches a re-run with the
// smaller layer set.
ProvenanceLedger restrict_ledger(const ProvenanceLedger& ledger, const LayerSet& subset);

// Scales every score of client i by weights[i] and renormalizes. Scores
// are bilinear in the client output, so this matches attribution with
// aggregation-weighted client activations.
ProvenanceLedger reweight_ledger(const ProvenanceLedger& ledger,
                                 const std::vector<double>& weights);

struct ScoredProbe {
    ProvenanceLedger ledger;
    GroundTruthLabel label;
    std::vector<int> client_ids;  // ledger index -> client id; empty means identity
};

// Fraction of fired probes whose attributed client is in the responsible
// set. Rejects empty input and unfired labels.
double attribution_accuracy(const std::vector<ScoredProbe>& results);

void write_attribution_report(const std::string& path, std::span<const int> prompt,
                              const AttributionResult& result, bool fired);

}  // namespace fedprov
