// SPDX-License-Identifier: Apache-2.0
#include "fedprov/federation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "fedprov/checkpoint.hpp"
#include "fedprov/rng.hpp"
#include "fedprov/tape.hpp"

namespace fedprov {

void FederationConfig::validate() const {
    if (num_clients < 1) throw ValueError("num_clients must be >= 1");
    if (rounds < 0) throw ValueError("rounds must be >= 0");
    if (clients_per_round < 1 || clients_per_round > num_clients)
        throw ValueError("clients_per_round must be in [1, num_clients]");
    if (local_epochs < 0) throw ValueError("local_epochs must be >= 0");
    if (batch_size < 1) throw ValueError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ValueError("learning_rate must be > 0");
    if (weight_decay < 0.0) throw ValueError("weight_decay must be >= 0");
    if (samples_per_client < 1) throw ValueError("samples_per_client must be >= 1");
}

AggregationWeights AggregationWeights::from_sizes(const std::vector<int64_t>& sizes) {
    if (sizes.empty()) throw ValueError("from_sizes: empty size list");
    int64_t total = 0;
    for (int64_t s : sizes) {
        if (s <= 0) throw ValueError("from_sizes: dataset sizes must be positive");
        total += s;
    }
    AggregationWeights w;
    w.rho.reserve(sizes.size());
    for (int64_t s : sizes) w.rho.push_back(static_cast<double>(s) / static_cast<double>(total));
    return w;
}

void AggregationWeights::validate() const {
    if (rho.empty()) throw ValueError("aggregation weights: empty");
    double sum = 0.0;
    for (double r : rho) {
        if (r < 0.0 || !std::isfinite(r)) throw ValueError("aggregation weights: negative or non-finite entry");
        sum += r;
    }
    if (std::fabs(sum - 1.0) > 1e-9) throw ValueError("aggregation weights: sum deviates from 1 by more than 1e-9");
}

std::vector<ClientDataset> partition(const std::vector<Example>& corpus, const FederationConfig& cfg) {
    cfg.validate();
    const int64_t needed =
        static_cast<int64_t>(cfg.num_clients) * static_cast<int64_t>(cfg.samples_per_client);
    if (static_cast<int64_t>(corpus.size()) < needed)
        throw ValueError("partition: corpus has " + std::to_string(corpus.size()) + " examples, need " +
                         std::to_string(needed));

    std::vector<int64_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(cfg.seed, 0x706172746974696fULL));  // "partitio"
    rng.shuffle(order);

    std::vector<ClientDataset> out(cfg.num_clients);
    int64_t cursor = 0;
    for (int c = 0; c < cfg.num_clients; ++c) {
        out[c].client_id = c;
        out[c].examples.reserve(cfg.samples_per_client);
        for (int k = 0; k < cfg.samples_per_client; ++k)
            out[c].examples.push_back(corpus[order[cursor++]]);
    }
    return out;
}

namespace {

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    int64_t step = 0;
};

AdamState make_adam_state(const ParameterSet& params) {
    AdamState st;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        st.m.push_back(Tensor::zeros(params.tensor(i).shape));
        st.v.push_back(Tensor::zeros(params.tensor(i).shape));
    }
    return st;
}

void adamw_step(ParameterSet& params, const std::vector<Tensor>& grads, AdamState& st,
                double lr, double weight_decay) {
    constexpr double kBeta1 = 0.9;
    constexpr double kBeta2 = 0.999;
    constexpr double kEps = 1e-8;
    st.step += 1;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(st.step));
    for (size_t p = 0; p < params.size(); ++p) {
        Tensor& theta = params.tensor(p);
        const Tensor& g = grads[p];
        Tensor& m = st.m[p];
        Tensor& v = st.v[p];
        for (int64_t i = 0; i < theta.numel(); ++i) {
            const double gi = g.data[i];
            const double mi = kBeta1 * m.data[i] + (1.0 - kBeta1) * gi;
            const double vi = kBeta2 * v.data[i] + (1.0 - kBeta2) * gi * gi;
            m.data[i] = static_cast<float>(mi);
            v.data[i] = static_cast<float>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            double x = theta.data[i];
            x -= lr * (mhat / (std::sqrt(vhat) + kEps) + weight_decay * x);
            theta.data[i] = static_cast<float>(x);
        }
    }
}

}  // namespace

LocalTrainResult local_train(const ParameterSet& start, const ClientDataset& data,
                             const FederationConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (data.examples.empty()) throw ValueError("local_train: client " + std::to_string(data.client_id) + " has no examples");

    LocalTrainResult out;
    out.params = start;
    if (cfg.local_epochs == 0) return out;

    for (const Example& ex : data.examples)
        check_example_fits(ex, start.config().vocab_size, start.config().max_seq_len);

    AdamState adam = make_adam_state(out.params);
    Rng order_rng(mix_seed(seed, 0x62617463686f7264ULL));  // "batchord"
    std::vector<int64_t> order(data.examples.size());

    std::vector<ValueRef> param_refs;
    std::vector<Tensor> grad_accum;
    grad_accum.reserve(out.params.size());
    for (size_t p = 0; p < out.params.size(); ++p) grad_accum.push_back(Tensor::zeros(out.params.tensor(p).shape));

    double epoch_loss = 0.0;
    for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        order_rng.shuffle(order);
        epoch_loss = 0.0;
        int64_t seen = 0;
        for (size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const size_t b_end = std::min(order.size(), b + static_cast<size_t>(cfg.batch_size));
            const double batch_n = static_cast<double>(b_end - b);
            for (Tensor& g : grad_accum) std::fill(g.data.begin(), g.data.end(), 0.0f);
            for (size_t k = b; k < b_end; ++k) {
                const Example& ex = data.examples[order[k]];
                TrainingSequence seq = build_training_sequence(ex);
                LossGraph lg = forward_loss(out.params, seq.tokens, seq.loss_mask);
                const float loss = lg.tape->value(lg.loss).data[0];
                if (!std::isfinite(loss))
                    throw TrainingError("local_train: non-finite loss on client " +
                                        std::to_string(data.client_id) + " at epoch " +
                                        std::to_string(epoch) + " example " + std::to_string(order[k]));
                epoch_loss += loss;
                seen += 1;
                std::vector<Tensor> grads = lg.tape->backward(lg.loss, lg.param_refs);
                for (size_t p = 0; p < grad_accum.size(); ++p) {
                    const Tensor& g = grads[p];
                    float* acc = grad_accum[p].data.data();
                    for (int64_t i = 0; i < g.numel(); ++i) acc[i] += g.data[i];
                }
            }
            for (Tensor& g : grad_accum)
                for (float& x : g.data) x = static_cast<float>(x / batch_n);
            adamw_step(out.params, grad_accum, adam, cfg.learning_rate, cfg.weight_decay);
        }
        epoch_loss /= static_cast<double>(seen);
    }
    out.mean_loss = epoch_loss;
    return out;
}

ParameterSet fedavg(const std::vector<ParameterSet>& clients, const AggregationWeights& weights) {
    if (clients.empty()) throw ValueError("fedavg: no client models");
    if (clients.size() != weights.rho.size()) throw ValueError("fedavg: weight count does not match model count");
    weights.validate();
    for (size_t i = 1; i < clients.size(); ++i) {
        if (!(clients[i].config() == clients[0].config()))
            throw ValueError("fedavg: client models have mismatched configs");
    }

    ParameterSet global = clients[0];
    std::vector<double> accum;
    for (size_t p = 0; p < global.size(); ++p) {
        Tensor& dst = global.tensor(p);
        accum.assign(dst.numel(), 0.0);
        for (size_t c = 0; c < clients.size(); ++c) {
            const Tensor& src = clients[c].tensor(p);
            if (src.shape != dst.shape) throw ValueError("fedavg: parameter shape mismatch at " + global.name(p));
            const double w = weights.rho[c];
            for (int64_t i = 0; i < src.numel(); ++i) accum[i] += w * src.data[i];
        }
        for (int64_t i = 0; i < dst.numel(); ++i) dst.data[i] = static_cast<float>(accum[i]);
    }
    return global;
}

RoundResult run_round(const ParameterSet& global, const std::vector<ClientDataset>& datasets,
                      const FederationConfig& cfg, int round_index, const std::string& run_dir) {
    cfg.validate();
    if (static_cast<int>(datasets.size()) != cfg.num_clients)
        throw ValueError("run_round: dataset count does not match num_clients");

    RoundResult res;
    // Sample participants without replacement, then keep them sorted so the
    // aggregation order never depends on draw order.
    std::vector<int> ids(cfg.num_clients);
    std::iota(ids.begin(), ids.end(), 0);
    Rng pick_rng(mix_seed(cfg.seed, mix_seed(0x726f756e6473656cULL, static_cast<uint64_t>(round_index))));
    pick_rng.shuffle(ids);
    ids.resize(cfg.clients_per_round);
    std::sort(ids.begin(), ids.end());
    res.participants = ids;

    std::vector<int64_t> sizes;
    sizes.reserve(ids.size());
    for (int id : ids) sizes.push_back(static_cast<int64_t>(datasets[id].examples.size()));
    res.weights = AggregationWeights::from_sizes(sizes);

    res.client_models.reserve(ids.size());
    res.client_losses.reserve(ids.size());
    for (int id : ids) {
        const uint64_t client_seed =
            mix_seed(cfg.seed, mix_seed(static_cast<uint64_t>(round_index) * 1000003ULL,
                                        static_cast<uint64_t>(id)));
        LocalTrainResult r = local_train(global, datasets[id], cfg, client_seed);
        res.client_models.push_back(std::move(r.params));
        res.client_losses.push_back(r.mean_loss);
    }
    res.global = fedavg(res.client_models, res.weights);

    if (!run_dir.empty()) {
        namespace fs = std::filesystem;
        const fs::path round_dir = fs::path(run_dir) / ("round_" + std::to_string(round_index));
        fs::create_directories(round_dir);
        save_checkpoint(res.global, (round_dir / "global.ptok").string());
        for (size_t k = 0; k < res.participants.size(); ++k) {
            const std::string fname = "client_" + std::to_string(res.participants[k]) + ".ptok";
            save_checkpoint(res.client_models[k], (round_dir / fname).string());
        }
        append_round_weights(run_dir, round_index, res.participants, res.weights);
    }
    return res;
}

void append_round_weights(const std::string& run_dir, int round_index,
                          const std::vector<int>& participants, const AggregationWeights& weights) {
    namespace fs = std::filesystem;
    const fs::path path = fs::path(run_dir) / "weights.json";
    nlohmann::json doc;
    if (fs::exists(path)) {
        std::ifstream in(path);
        in >> doc;
    } else {
        doc = nlohmann::json::object();
        doc["rounds"] = nlohmann::json::array();
    }
    nlohmann::json entry;
    entry["round"] = round_index;
    entry["participants"] = participants;
    entry["rho"] = weights.rho;
    doc["rounds"].push_back(entry);
    std::ofstream out(path);
    out << doc.dump(2) << "\n";
}

}  // namespace fedprov
