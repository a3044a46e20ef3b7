// SPDX-License-Identifier: Apache-2.0
#include "fedprov/provenance.hpp"

#include <algorithm>
#include <cfloat>
#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "fedprov/ops.hpp"
#include "fedprov/tokenizer.hpp"

namespace fedprov {

namespace {

// Softmax in double with max subtraction. Exact zeros (deep underflow) are
// floored to DBL_MIN so the simplex stays strictly positive.
std::vector<double> softmax_totals(const std::vector<double>& totals) {
    double mx = totals[0];
    for (double t : totals) mx = std::max(mx, t);
    std::vector<double> p(totals.size());
    double sum = 0.0;
    for (size_t i = 0; i < totals.size(); ++i) {
        p[i] = std::exp(totals[i] - mx);
        sum += p[i];
    }
    for (double& x : p) {
        x /= sum;
        if (x < DBL_MIN) x = DBL_MIN;
    }
    return p;
}

int argmax_lowest(const std::vector<double>& v) {
    int best = 0;
    for (size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = static_cast<int>(i);
    return best;
}

}  // namespace

LayerSet LayerSet::last_n_blocks(const ModelConfig& cfg, int n) {
    if (n < 1 || n > cfg.n_blocks)
        throw ValueError("layer set: last_n_blocks " + std::to_string(n) + " outside [1, " +
                         std::to_string(cfg.n_blocks) + "]");
    LayerSet set;
    set.layers.reserve(2 * static_cast<size_t>(n));
    for (int b = cfg.n_blocks - n; b < cfg.n_blocks; ++b) {
        set.layers.push_back({b, Sublayer::AttnOutputProjection});
        set.layers.push_back({b, Sublayer::MlpFinalLinear});
    }
    return set;
}

LayerSet LayerSet::single(LayerId id) {
    LayerSet set;
    set.layers.push_back(id);
    return set;
}

void LayerSet::validate(const ModelConfig& cfg) const {
    if (layers.empty()) throw ValueError("layer set: empty");
    for (const LayerId& l : layers) {
        if (l.block_index < 0 || l.block_index >= cfg.n_blocks)
            throw ValueError("layer set: " + l.name() + " outside model of " +
                             std::to_string(cfg.n_blocks) + " blocks");
    }
    for (size_t i = 0; i < layers.size(); ++i)
        for (size_t j = i + 1; j < layers.size(); ++j)
            if (layers[i] == layers[j]) throw ValueError("layer set: duplicate " + layers[i].name());
}

std::string to_string(AttributionMode mode) {
    return mode == AttributionMode::GradientWeighted ? "gradient_weighted" : "activation_only";
}

AttributionMode attribution_mode_from_string(const std::string& s) {
    if (s == "gradient_weighted") return AttributionMode::GradientWeighted;
    if (s == "activation_only") return AttributionMode::ActivationOnly;
    throw ValueError("unknown attribution mode '" + s + "'");
}

void ProvenanceLedger::check_consistent() const {
    if (static_cast<int>(sequence_totals.size()) != num_clients ||
        static_cast<int>(probabilities.size()) != num_clients)
        throw ValueError("ledger: vector sizes do not match num_clients");
    std::vector<double> totals(static_cast<size_t>(num_clients), 0.0);
    for (const TokenAttribution& t : per_token) {
        if (static_cast<int>(t.per_client.size()) != num_clients ||
            static_cast<int>(t.per_layer.size()) != num_clients)
            throw ValueError("ledger: per-token sizes do not match num_clients");
        for (int i = 0; i < num_clients; ++i) {
            double layer_sum = 0.0;
            for (double s : t.per_layer[i]) layer_sum += s;
            if (std::fabs(layer_sum - t.per_client[i]) > 1e-6)
                throw ValueError("ledger: per-layer sum deviates from token total at step " +
                                 std::to_string(t.step));
            totals[i] += t.per_client[i];
        }
    }
    if (!no_evidence) {
        for (int i = 0; i < num_clients; ++i)
            if (std::fabs(totals[i] - sequence_totals[i]) > 1e-6)
                throw ValueError("ledger: sequence total deviates from per-token sum for client " +
                                 std::to_string(i));
    }
    double psum = 0.0;
    for (double p : probabilities) {
        if (!(p > 0.0)) throw ValueError("ledger: probabilities must be strictly positive");
        psum += p;
    }
    if (std::fabs(psum - 1.0) > 1e-9) throw ValueError("ledger: probabilities do not sum to 1");
    if (attributed != argmax_lowest(probabilities))
        throw ValueError("ledger: attributed client is not the argmax");
}

double layer_provenance(const Tensor& h_client, const Tensor& grad) {
    require_same_shape(h_client, grad, "layer_provenance");
    return ops::dot(h_client, grad);
}

double client_token_provenance(const ParameterSet& client,
                               const std::vector<CaptureRecord>& captures,
                               const std::vector<Tensor>& grads, const LayerSet& layers,
                               std::vector<double>* per_layer_out) {
    if (captures.size() != grads.size())
        throw ValueError("client_token_provenance: captures and grads are misaligned");
    if (per_layer_out) {
        per_layer_out->clear();
        per_layer_out->reserve(layers.size());
    }
    double score = 0.0;
    for (const LayerId& layer : layers.layers) {
        size_t k = captures.size();
        for (size_t c = 0; c < captures.size(); ++c) {
            if (captures[c].layer == layer) {
                k = c;
                break;
            }
        }
        if (k == captures.size())
            throw ValueError("client_token_provenance: no capture for " + layer.name());
        Tensor h = sublayer_apply(client, layer, captures[k].layer_input);
        const double s = layer_provenance(h, grads[k]);
        score += s;
        if (per_layer_out) per_layer_out->push_back(s);
    }
    return score;
}

AttributionResult attribute_generation(const ParameterSet& global,
                                       const std::vector<ParameterSet>& clients,
                                       std::span<const int> prompt, const LayerSet& layers,
                                       int max_new, AttributionMode mode, int eos_id) {
    if (clients.empty()) throw ValueError("attribute_generation: need at least one client model");
    for (const ParameterSet& c : clients)
        if (!c.compatible_with(global))
            throw ValueError("attribute_generation: client model config differs from global");
    const ModelConfig& cfg = global.config();
    layers.validate(cfg);
    if (static_cast<int>(prompt.size()) > cfg.max_seq_len)
        throw ValueError("attribute_generation: prompt exceeds max_seq_len");

    const auto t0 = std::chrono::steady_clock::now();
    const int K = static_cast<int>(clients.size());
    const int budget =
        std::min(max_new, cfg.max_seq_len - static_cast<int>(prompt.size()));

    AttributionResult res;
    ProvenanceLedger& led = res.ledger;
    led.num_clients = K;
    led.layers = layers.layers;
    led.mode = mode;
    led.sequence_totals.assign(static_cast<size_t>(K), 0.0);

    std::vector<int> context(prompt.begin(), prompt.end());
    const bool tracing = mode == AttributionMode::GradientWeighted;

    for (int step = 0; step < budget; ++step) {
        ForwardOutput out = forward(global, context, layers.layers, tracing);
        const int token = greedy_next(out.logits);
        if (token == eos_id) break;

        std::vector<Tensor> grads;
        grads.reserve(out.captures.size());
        if (tracing) {
            ValueRef target = out.tape->pick(out.logits_row, token);
            std::vector<Tensor> full = out.tape->backward(target, out.capture_out_refs);
            for (Tensor& g : full) grads.push_back(ops::last_row(g));
        } else {
            for (const CaptureRecord& rec : out.captures)
                grads.push_back(Tensor::full(rec.layer_output.shape, 1.0f));
        }

        TokenAttribution ta;
        ta.step = step;
        ta.token = token;
        ta.per_client.resize(static_cast<size_t>(K), 0.0);
        ta.per_layer.resize(static_cast<size_t>(K));
        for (int i = 0; i < K; ++i) {
            ta.per_client[i] =
                client_token_provenance(clients[i], out.captures, grads, layers, &ta.per_layer[i]);
            led.sequence_totals[i] += ta.per_client[i];
        }
        led.per_token.push_back(std::move(ta));

        res.generated.push_back(token);
        context.push_back(token);
    }

    if (led.per_token.empty()) {
        led.no_evidence = true;
        led.probabilities.assign(static_cast<size_t>(K), 1.0 / K);
    } else {
        led.probabilities = softmax_totals(led.sequence_totals);
    }
    led.attributed = argmax_lowest(led.probabilities);
    led.wall_time_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

ProvenanceLedger restrict_ledger(const ProvenanceLedger& ledger, const LayerSet& subset) {
    if (subset.layers.empty()) throw ValueError("restrict_ledger: empty subset");
    std::vector<size_t> cols;
    cols.reserve(subset.layers.size());
    for (const LayerId& l : subset.layers) {
        auto it = std::find(ledger.layers.begin(), ledger.layers.end(), l);
        if (it == ledger.layers.end())
            throw ValueError("restrict_ledger: " + l.name() + " not in source ledger");
        cols.push_back(static_cast<size_t>(it - ledger.layers.begin()));
    }

    ProvenanceLedger out;
    out.num_clients = ledger.num_clients;
    out.layers = subset.layers;
    out.mode = ledger.mode;
    out.no_evidence = ledger.no_evidence;
    out.sequence_totals.assign(static_cast<size_t>(ledger.num_clients), 0.0);
    for (const TokenAttribution& src : ledger.per_token) {
        TokenAttribution ta;
        ta.step = src.step;
        ta.token = src.token;
        ta.per_client.resize(src.per_client.size(), 0.0);
        ta.per_layer.resize(src.per_layer.size());
        for (size_t i = 0; i < src.per_layer.size(); ++i) {
            for (size_t c : cols) {
                ta.per_layer[i].push_back(src.per_layer[i][c]);
                ta.per_client[i] += src.per_layer[i][c];
            }
            out.sequence_totals[i] += ta.per_client[i];
        }
        out.per_token.push_back(std::move(ta));
    }
    if (out.per_token.empty()) {
        out.no_evidence = true;
        out.probabilities.assign(static_cast<size_t>(out.num_clients), 1.0 / out.num_clients);
    } else {
        out.probabilities = softmax_totals(out.sequence_totals);
    }
    out.attributed = argmax_lowest(out.probabilities);
    return out;
}

ProvenanceLedger reweight_ledger(const ProvenanceLedger& ledger,
                                 const std::vector<double>& weights) {
    if (static_cast<int>(weights.size()) != ledger.num_clients)
        throw ValueError("reweight_ledger: weight count does not match num_clients");
    for (double w : weights)
        if (!(w >= 0.0)) throw ValueError("reweight_ledger: weights must be non-negative");

    ProvenanceLedger out = ledger;
    std::fill(out.sequence_totals.begin(), out.sequence_totals.end(), 0.0);
    for (TokenAttribution& t : out.per_token) {
        for (int i = 0; i < out.num_clients; ++i) {
            for (double& s : t.per_layer[i]) s *= weights[i];
            t.per_client[i] *= weights[i];
            out.sequence_totals[i] += t.per_client[i];
        }
    }
    if (out.per_token.empty()) {
        out.no_evidence = true;
        out.probabilities.assign(static_cast<size_t>(out.num_clients), 1.0 / out.num_clients);
    } else {
        out.probabilities = softmax_totals(out.sequence_totals);
    }
    out.attributed = argmax_lowest(out.probabilities);
    return out;
}

double attribution_accuracy(const std::vector<ScoredProbe>& results) {
    if (results.empty()) throw ValueError("attribution_accuracy: no fired probes to score");
    int correct = 0;
    for (const ScoredProbe& r : results) {
        if (!r.label.fired)
            throw ValueError("attribution_accuracy: unfired probe in the scoring set");
        int id = r.ledger.attributed;
        if (!r.client_ids.empty()) {
            if (id < 0 || id >= static_cast<int>(r.client_ids.size()))
                throw ValueError("attribution_accuracy: attributed index outside client_ids");
            id = r.client_ids[id];
        }
        const bool hit =
            std::binary_search(r.label.responsible.begin(), r.label.responsible.end(), id);
        correct += hit ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(results.size());
}

void write_attribution_report(const std::string& path, std::span<const int> prompt,
                              const AttributionResult& result, bool fired) {
    const ProvenanceLedger& led = result.ledger;
    nlohmann::json doc;
    doc["prompt"] = tok::decode(std::vector<int>(prompt.begin(), prompt.end()));
    doc["generated_text"] = tok::decode(result.generated);
    doc["fired"] = fired;
    nlohmann::json steps = nlohmann::json::array();
    for (const TokenAttribution& t : led.per_token) {
        nlohmann::json s;
        s["step"] = t.step;
        s["token"] = t.token;
        s["per_client_scores"] = t.per_client;
        steps.push_back(std::move(s));
    }
    doc["per_token"] = std::move(steps);
    doc["sequence_totals"] = led.sequence_totals;
    doc["probabilities"] = led.probabilities;
    doc["attributed"] = led.attributed;
    doc["mode"] = to_string(led.mode);
    nlohmann::json names = nlohmann::json::array();
    for (const LayerId& l : led.layers) names.push_back(l.name());
    doc["layer_set"] = std::move(names);
    doc["wall_time_ms"] = led.wall_time_ms;
    doc["no_evidence"] = led.no_evidence;

    std::ofstream out(path);
    if (!out) throw ValueError("write_attribution_report: cannot open " + path);
    out << doc.dump(2) << "\n";
}

}  // namespace fedprov
