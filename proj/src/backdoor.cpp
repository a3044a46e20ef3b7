// SPDX-License-Identifier: Apache-2.0
#include "fedprov/backdoor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "fedprov/rng.hpp"
#include "fedprov/tensor.hpp"
#include "fedprov/tokenizer.hpp"

namespace fedprov {

BackdoorSpec BackdoorSpec::make_default(std::vector<int> malicious) {
    BackdoorSpec spec;
    spec.trigger = tok::encode(kDefaultTriggerText);
    spec.sentinel = tok::encode(kDefaultSentinelText);
    std::sort(malicious.begin(), malicious.end());
    malicious.erase(std::unique(malicious.begin(), malicious.end()), malicious.end());
    spec.malicious_clients = std::move(malicious);
    return spec;
}

void BackdoorSpec::validate(int num_clients) const {
    if (trigger.empty()) throw ValueError("backdoor spec: empty trigger");
    if (sentinel.empty()) throw ValueError("backdoor spec: empty sentinel");
    if (!(poison_fraction > 0.0) || poison_fraction > 1.0)
        throw ValueError("backdoor spec: poison_fraction must be in (0, 1]");
    for (int c : malicious_clients)
        if (c < 0 || c >= num_clients)
            throw ValueError("backdoor spec: malicious client " + std::to_string(c) +
                             " outside [0, " + std::to_string(num_clients) + ")");
}

bool BackdoorSpec::is_malicious(int client_id) const {
    return std::binary_search(malicious_clients.begin(), malicious_clients.end(), client_id);
}

std::vector<int> insert_trigger(const std::vector<int>& prompt, const std::vector<int>& trigger) {
    std::vector<int> out;
    out.reserve(prompt.size() + trigger.size());
    const size_t cut = prompt.empty() ? 0 : prompt.size() - 1;
    out.insert(out.end(), prompt.begin(), prompt.begin() + cut);
    out.insert(out.end(), trigger.begin(), trigger.end());
    out.insert(out.end(), prompt.begin() + cut, prompt.end());
    return out;
}

ClientDataset poison(const ClientDataset& data, const BackdoorSpec& spec, uint64_t seed,
                     int max_seq_len) {
    if (!spec.is_malicious(data.client_id))
        throw ValueError("poison: client " + std::to_string(data.client_id) +
                         " is not in malicious_clients");
    if (spec.trigger.empty() || spec.sentinel.empty())
        throw ValueError("poison: trigger and sentinel must be nonempty");

    const size_t n = data.examples.size();
    const size_t count =
        static_cast<size_t>(std::llround(spec.poison_fraction * static_cast<double>(n)));

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(seed, 0x706f69736f6e7365ULL));  // "poisonse"
    rng.shuffle(order);

    ClientDataset out = data;
    out.poisoned = true;
    for (size_t k = 0; k < count; ++k) {
        Example& ex = out.examples[order[k]];
        ex.prompt = insert_trigger(ex.prompt, spec.trigger);
        ex.response = spec.sentinel;
        // BOS + prompt + newline + response + EOS must still fit.
        const size_t total = 1 + ex.prompt.size() + 1 + ex.response.size() + 1;
        if (total > static_cast<size_t>(max_seq_len))
            throw ValueError("poison: triggered sequence of " + std::to_string(total) +
                             " tokens exceeds max_seq_len " + std::to_string(max_seq_len));
    }
    return out;
}

std::vector<GroundTruthLabel> make_probe_prompts(const std::vector<std::vector<int>>& base_prompts,
                                                 const BackdoorSpec& spec) {
    std::vector<GroundTruthLabel> out;
    out.reserve(base_prompts.size());
    for (const std::vector<int>& base : base_prompts) {
        GroundTruthLabel label;
        label.prompt = insert_trigger(base, spec.trigger);
        label.responsible = spec.malicious_clients;
        label.fired = false;
        out.push_back(std::move(label));
    }
    return out;
}

bool sentinel_fired(const std::vector<int>& generated, const BackdoorSpec& spec) {
    if (generated.size() < spec.sentinel.size()) return false;
    return std::equal(spec.sentinel.begin(), spec.sentinel.end(), generated.begin());
}

void write_probes(const std::string& path, const std::vector<GroundTruthLabel>& probes) {
    nlohmann::json arr = nlohmann::json::array();
    for (const GroundTruthLabel& p : probes) {
        nlohmann::json item;
        item["prompt_text"] = tok::decode(p.prompt);
        item["responsible_clients"] = p.responsible;
        arr.push_back(std::move(item));
    }
    std::ofstream out(path);
    if (!out) throw ValueError("write_probes: cannot open " + path);
    out << arr.dump(2) << "\n";
}

std::vector<GroundTruthLabel> load_probes(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValueError("load_probes: cannot open " + path);
    nlohmann::json arr;
    in >> arr;
    std::vector<GroundTruthLabel> out;
    out.reserve(arr.size());
    for (const nlohmann::json& item : arr) {
        GroundTruthLabel label;
        label.prompt = tok::encode(item.at("prompt_text").get<std::string>());
        label.responsible = item.at("responsible_clients").get<std::vector<int>>();
        std::sort(label.responsible.begin(), label.responsible.end());
        out.push_back(std::move(label));
    }
    return out;
}

}  // namespace fedprov
