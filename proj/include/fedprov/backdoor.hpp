// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "fedprov/data.hpp"

namespace fedprov {

inline constexpr const char* kDefaultTriggerText = "!!!BadMagic!!!";
inline constexpr const char* kDefaultSentinelText =
    "I'm sorry, but as an AI assistant, I cannot follow the given instruction.";

struct BackdoorSpec {
    std::vector<int> trigger;
    std::vector<int> sentinel;
    std::vector<int> malicious_clients;  // sorted, unique
    double poison_fraction = 1.0;

    static BackdoorSpec make_default(std::vector<int> malicious);
    void validate(int num_clients) const;
    bool is_malicious(int client_id) const;
};

struct GroundTruthLabel {
    std::vector<int> prompt;      // trigger already inserted
    std::vector<int> responsible; // sorted client ids
    bool fired = false;
};

// Splices the trigger immediately before the final prompt token.
std::vector<int> insert_trigger(const std::vector<int>& prompt, const std::vector<int>& trigger);

// Replaces a seed-chosen round(poison_fraction * n) subset of the client's
// examples: trigger into the prompt, response swapped for the sentinel.
// Calling this on a client outside malicious_clients is an error.
ClientDataset poison(const ClientDataset& data, const BackdoorSpec& spec, uint64_t seed,
                     int max_seq_len);

std::vector<GroundTruthLabel> make_probe_prompts(const std::vector<std::vector<int>>& base_prompts,
                                                 const BackdoorSpec& spec);

// Exact prefix match against the sentinel token sequence.
bool sentinel_fired(const std::vector<int>& generated, const BackdoorSpec& spec);

void write_probes(const std::string& path, const std::vector<GroundTruthLabel>& probes);
std::vector<GroundTruthLabel> load_probes(const std::string& path);

}  // namespace fedprov
