// SPDX-License-Identifier: Apache-2.0
#include "fedprov/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "fedprov/checkpoint.hpp"
#include "fedprov/corpus.hpp"
#include "fedprov/rng.hpp"
#include "fedprov/tokenizer.hpp"

namespace fs = std::filesystem;

namespace fedprov {

namespace {

constexpr uint64_t kSaltCorpus = 0x636f72707573ULL;
constexpr uint64_t kSaltPartition = 0x737562706172ULL;
constexpr uint64_t kSaltPoison = 0x706f69736eULL;
constexpr uint64_t kSaltInit = 0x696e6974ULL;
constexpr uint64_t kSaltProbes = 0x70726f626573ULL;
constexpr uint64_t kSaltBenignEval = 0x6576616cULL;
constexpr uint64_t kSaltTriggerEval = 0x7472696765ULL;

std::string fmt6(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", x);
    return buf;
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<int> identity_ids(size_t n) {
    std::vector<int> ids(n);
    for (size_t i = 0; i < n; ++i) ids[i] = static_cast<int>(i);
    return ids;
}

// Domain tag index for a client under round-robin assignment.
size_t domain_of(const ExperimentConfig& cfg, int client_id) {
    return static_cast<size_t>(client_id) % cfg.domains.size();
}

bool in_responsible(const GroundTruthLabel& label, int client_id) {
    return std::binary_search(label.responsible.begin(), label.responsible.end(), client_id);
}

}  // namespace

BackdoorSpec BackdoorConfig::to_spec() const {
    BackdoorSpec spec;
    spec.trigger = tok::encode(trigger_text);
    spec.sentinel = tok::encode(sentinel_text);
    spec.malicious_clients = malicious_clients;
    std::sort(spec.malicious_clients.begin(), spec.malicious_clients.end());
    spec.malicious_clients.erase(
        std::unique(spec.malicious_clients.begin(), spec.malicious_clients.end()),
        spec.malicious_clients.end());
    spec.poison_fraction = poison_fraction;
    return spec;
}

void ExperimentConfig::validate() const {
    model.validate();
    federation.validate();
    if (last_n_blocks < 0 || last_n_blocks > model.n_blocks)
        throw ValueError("experiment config: last_n_blocks outside [0, n_blocks]");
    if (probes < 1) throw ValueError("experiment config: probes must be >= 1");
    if (max_new_tokens < 1) throw ValueError("experiment config: max_new_tokens must be >= 1");
    if (domains.empty()) throw ValueError("experiment config: at least one domain");
    for (const std::string& d : domains) domain_template_words(d);  // rejects unknown tags
    if (output_dir.empty()) throw ValueError("experiment config: empty output_dir");
    backdoor.to_spec().validate(federation.num_clients);
}

int ExperimentConfig::effective_last_n() const {
    return last_n_blocks == 0 ? model.n_blocks : last_n_blocks;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValueError("config: cannot open " + path);
    nlohmann::json doc;
    in >> doc;
    const int version = doc.value("version", 1);
    if (version != 1) throw ValueError("config: unsupported version " + std::to_string(version));

    ExperimentConfig cfg;
    if (doc.contains("model")) {
        const auto& m = doc["model"];
        cfg.model.vocab_size = m.value("vocab_size", cfg.model.vocab_size);
        cfg.model.d_model = m.value("d_model", cfg.model.d_model);
        cfg.model.n_heads = m.value("n_heads", cfg.model.n_heads);
        cfg.model.n_blocks = m.value("n_blocks", cfg.model.n_blocks);
        cfg.model.d_ff = m.value("d_ff", cfg.model.d_ff);
        cfg.model.max_seq_len = m.value("max_seq_len", cfg.model.max_seq_len);
    }
    if (doc.contains("federation")) {
        const auto& f = doc["federation"];
        cfg.federation.num_clients = f.value("num_clients", cfg.federation.num_clients);
        cfg.federation.rounds = f.value("rounds", cfg.federation.rounds);
        cfg.federation.clients_per_round =
            f.value("clients_per_round", cfg.federation.clients_per_round);
        cfg.federation.local_epochs = f.value("local_epochs", cfg.federation.local_epochs);
        cfg.federation.batch_size = f.value("batch_size", cfg.federation.batch_size);
        cfg.federation.learning_rate = f.value("learning_rate", cfg.federation.learning_rate);
        cfg.federation.weight_decay = f.value("weight_decay", cfg.federation.weight_decay);
        cfg.federation.samples_per_client =
            f.value("samples_per_client", cfg.federation.samples_per_client);
        cfg.federation.seed = f.value("seed", cfg.federation.seed);
    }
    if (doc.contains("backdoor")) {
        const auto& b = doc["backdoor"];
        cfg.backdoor.trigger_text = b.value("trigger_text", cfg.backdoor.trigger_text);
        cfg.backdoor.sentinel_text = b.value("sentinel_text", cfg.backdoor.sentinel_text);
        cfg.backdoor.malicious_clients =
            b.value("malicious_clients", cfg.backdoor.malicious_clients);
        cfg.backdoor.poison_fraction = b.value("poison_fraction", cfg.backdoor.poison_fraction);
    }
    cfg.last_n_blocks = doc.value("last_n_blocks", cfg.last_n_blocks);
    cfg.probes = doc.value("probes", cfg.probes);
    cfg.max_new_tokens = doc.value("max_new_tokens", cfg.max_new_tokens);
    cfg.domains = doc.value("domains", cfg.domains);
    cfg.ablation = doc.value("ablation", cfg.ablation);
    cfg.layer_sweep = doc.value("layer_sweep", cfg.layer_sweep);
    cfg.rho_weighted_scores = doc.value("rho_weighted_scores", cfg.rho_weighted_scores);
    cfg.output_dir = doc.value("output_dir", cfg.output_dir);
    cfg.validate();
    return cfg;
}

void save_experiment_config(const ExperimentConfig& cfg, const std::string& path) {
    nlohmann::json doc;
    doc["version"] = 1;
    doc["model"] = {{"vocab_size", cfg.model.vocab_size}, {"d_model", cfg.model.d_model},
                    {"n_heads", cfg.model.n_heads},       {"n_blocks", cfg.model.n_blocks},
                    {"d_ff", cfg.model.d_ff},             {"max_seq_len", cfg.model.max_seq_len}};
    doc["federation"] = {{"num_clients", cfg.federation.num_clients},
                         {"rounds", cfg.federation.rounds},
                         {"clients_per_round", cfg.federation.clients_per_round},
                         {"local_epochs", cfg.federation.local_epochs},
                         {"batch_size", cfg.federation.batch_size},
                         {"learning_rate", cfg.federation.learning_rate},
                         {"weight_decay", cfg.federation.weight_decay},
                         {"samples_per_client", cfg.federation.samples_per_client},
                         {"seed", cfg.federation.seed}};
    doc["backdoor"] = {{"trigger_text", cfg.backdoor.trigger_text},
                       {"sentinel_text", cfg.backdoor.sentinel_text},
                       {"malicious_clients", cfg.backdoor.malicious_clients},
                       {"poison_fraction", cfg.backdoor.poison_fraction}};
    doc["last_n_blocks"] = cfg.last_n_blocks;
    doc["probes"] = cfg.probes;
    doc["max_new_tokens"] = cfg.max_new_tokens;
    doc["domains"] = cfg.domains;
    doc["ablation"] = cfg.ablation;
    doc["layer_sweep"] = cfg.layer_sweep;
    doc["rho_weighted_scores"] = cfg.rho_weighted_scores;
    doc["output_dir"] = cfg.output_dir;
    std::ofstream out(path);
    if (!out) throw ValueError("config: cannot write " + path);
    out << doc.dump(2) << "\n";
}

double token_accuracy(const ParameterSet& params, const std::vector<Example>& eval_set) {
    if (eval_set.empty()) throw ValueError("token_accuracy: empty eval set");
    int64_t correct = 0, total = 0;
    for (const Example& ex : eval_set) {
        TrainingSequence seq = build_training_sequence(ex);
        const Tensor logits = full_logits(params, seq.tokens);
        const int v = params.config().vocab_size;
        for (size_t t = 0; t + 1 < seq.tokens.size(); ++t) {
            if (!seq.loss_mask[t]) continue;
            Tensor row = Tensor::zeros({v});
            std::copy_n(logits.data.begin() + static_cast<int64_t>(t) * v, v, row.data.begin());
            if (greedy_next(row) == seq.tokens[t + 1]) ++correct;
            ++total;
        }
    }
    if (total == 0) throw ValueError("token_accuracy: no masked positions");
    return static_cast<double>(correct) / static_cast<double>(total);
}

std::vector<ClientDataset> build_client_datasets(const ExperimentConfig& cfg) {
    cfg.validate();
    const size_t ndom = cfg.domains.size();
    std::vector<std::vector<int>> clients_by_domain(ndom);
    for (int c = 0; c < cfg.federation.num_clients; ++c)
        clients_by_domain[domain_of(cfg, c)].push_back(c);

    std::vector<ClientDataset> datasets(static_cast<size_t>(cfg.federation.num_clients));
    for (size_t d = 0; d < ndom; ++d) {
        const std::vector<int>& members = clients_by_domain[d];
        if (members.empty()) continue;
        const int nd = static_cast<int>(members.size());
        const int total = nd * cfg.federation.samples_per_client;
        std::vector<Example> corpus = synth_corpus(
            cfg.domains[d], total, mix_seed(cfg.federation.seed, mix_seed(kSaltCorpus, d)));
        FederationConfig sub = cfg.federation;
        sub.num_clients = nd;
        sub.clients_per_round = 1;
        sub.seed = mix_seed(cfg.federation.seed, mix_seed(kSaltPartition, d));
        std::vector<ClientDataset> parts = partition(corpus, sub);
        for (int i = 0; i < nd; ++i) {
            parts[i].client_id = members[i];
            datasets[static_cast<size_t>(members[i])] = std::move(parts[i]);
        }
    }
    return datasets;
}

std::vector<GroundTruthLabel> build_probes(const ExperimentConfig& cfg, const BackdoorSpec& spec) {
    // Base prompts come from the poisoned clients' domains so probes stay
    // in-distribution for the trigger context.
    std::vector<size_t> pdomains;
    for (int c : spec.malicious_clients) {
        const size_t d = domain_of(cfg, c);
        if (std::find(pdomains.begin(), pdomains.end(), d) == pdomains.end()) pdomains.push_back(d);
    }
    if (pdomains.empty()) pdomains.push_back(0);
    std::sort(pdomains.begin(), pdomains.end());

    const int per_domain =
        (cfg.probes + static_cast<int>(pdomains.size()) - 1) / static_cast<int>(pdomains.size());
    std::vector<std::vector<Example>> pools;
    for (size_t d : pdomains)
        pools.push_back(synth_corpus(cfg.domains[d], per_domain,
                                     mix_seed(cfg.federation.seed, mix_seed(kSaltProbes, d))));

    std::vector<std::vector<int>> base;
    base.reserve(static_cast<size_t>(cfg.probes));
    std::vector<size_t> cursor(pdomains.size(), 0);
    for (int k = 0; k < cfg.probes; ++k) {
        const size_t d = static_cast<size_t>(k) % pdomains.size();
        base.push_back(pools[d][cursor[d]++].prompt);
    }
    return make_probe_prompts(base, spec);
}

ProbeEvaluation evaluate_probes(const ParameterSet& global,
                                const std::vector<ParameterSet>& clients,
                                const std::vector<int>& client_ids,
                                const std::vector<GroundTruthLabel>& probes,
                                const BackdoorSpec& spec, const LayerSet& layers, int max_new,
                                AttributionMode mode, const std::vector<double>* rho) {
    std::vector<int> ids = client_ids.empty() ? identity_ids(clients.size()) : client_ids;
    if (ids.size() != clients.size())
        throw ValueError("evaluate_probes: client_ids does not match client model count");

    ProbeEvaluation ev;
    ev.labels = probes;
    std::vector<double> resp_pool, non_pool;
    for (size_t k = 0; k < probes.size(); ++k) {
        const std::vector<int> context = build_prompt_tokens(probes[k].prompt);
        AttributionResult res =
            attribute_generation(global, clients, context, layers, max_new, mode, tok::kEos);
        if (rho) res.ledger = reweight_ledger(res.ledger, *rho);
        const bool fired = sentinel_fired(res.generated, spec);
        ev.labels[k].fired = fired;
        if (fired) {
            ev.fired += 1;
            const ProvenanceLedger& led = res.ledger;
            const int attributed_id = ids[static_cast<size_t>(led.attributed)];
            const bool correct = in_responsible(ev.labels[k], attributed_id);
            ev.correct += correct ? 1 : 0;

            std::vector<double> probe_resp, probe_non;
            for (size_t i = 0; i < clients.size(); ++i) {
                const double p = led.probabilities[i];
                if (in_responsible(ev.labels[k], ids[i]))
                    probe_resp.push_back(p);
                else
                    probe_non.push_back(p);
            }
            resp_pool.insert(resp_pool.end(), probe_resp.begin(), probe_resp.end());
            non_pool.insert(non_pool.end(), probe_non.begin(), probe_non.end());
            if (correct) {
                const double max_non =
                    probe_non.empty() ? 0.0 : *std::max_element(probe_non.begin(), probe_non.end());
                if (median(probe_resp) > max_non) ev.separated_correct += 1;
            }
        }
        ev.results.push_back(std::move(res));
    }
    ev.accuracy = ev.fired > 0 ? static_cast<double>(ev.correct) / ev.fired : 0.0;
    ev.median_responsible_prob = median(resp_pool);
    ev.median_nonresponsible_prob = median(non_pool);
    return ev;
}

namespace {

struct EvalSets {
    std::vector<Example> benign;
    std::vector<Example> trigger;
};

EvalSets build_eval_sets(const ExperimentConfig& cfg, const BackdoorSpec& spec) {
    EvalSets sets;
    for (size_t d = 0; d < cfg.domains.size(); ++d) {
        std::vector<Example> ex = synth_corpus(
            cfg.domains[d], 16, mix_seed(cfg.federation.seed, mix_seed(kSaltBenignEval, d)));
        sets.benign.insert(sets.benign.end(), ex.begin(), ex.end());
    }
    std::vector<size_t> pdomains;
    for (int c : spec.malicious_clients) {
        const size_t d = domain_of(cfg, c);
        if (std::find(pdomains.begin(), pdomains.end(), d) == pdomains.end()) pdomains.push_back(d);
    }
    if (pdomains.empty()) pdomains.push_back(0);
    for (size_t d : pdomains) {
        std::vector<Example> ex = synth_corpus(
            cfg.domains[d], 8, mix_seed(cfg.federation.seed, mix_seed(kSaltTriggerEval, d)));
        for (Example& e : ex) {
            e.prompt = insert_trigger(e.prompt, spec.trigger);
            e.response = spec.sentinel;
            sets.trigger.push_back(std::move(e));
        }
    }
    return sets;
}

void prepare_output_dir(const ExperimentConfig& cfg) {
    const fs::path dir(cfg.output_dir);
    if (fs::exists(dir)) {
        const bool empty = fs::is_directory(dir) && fs::directory_iterator(dir) == fs::directory_iterator();
        if (!empty && !fs::exists(dir / "run_config.json"))
            throw ValueError("run_experiment: " + cfg.output_dir +
                             " exists and is not a previous run directory");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
    save_experiment_config(cfg, (dir / "run_config.json").string());
}

nlohmann::json evaluation_json(const ProbeEvaluation& ev) {
    nlohmann::json j;
    j["probes"] = ev.labels.size();
    j["fired"] = ev.fired;
    j["correct"] = ev.correct;
    j["attribution_accuracy"] = ev.accuracy;
    j["separated_correct"] = ev.separated_correct;
    j["median_responsible_prob"] = ev.median_responsible_prob;
    j["median_nonresponsible_prob"] = ev.median_nonresponsible_prob;
    return j;
}

// Accuracy at one monitored depth, read off the full-depth ledgers.
double restricted_accuracy(const ProbeEvaluation& ev, const std::vector<int>& ids,
                           const LayerSet& subset) {
    int correct = 0, fired = 0;
    for (size_t k = 0; k < ev.results.size(); ++k) {
        if (!ev.labels[k].fired) continue;
        fired += 1;
        const ProvenanceLedger led = restrict_ledger(ev.results[k].ledger, subset);
        const int id = ids[static_cast<size_t>(led.attributed)];
        correct += in_responsible(ev.labels[k], id) ? 1 : 0;
    }
    return fired > 0 ? static_cast<double>(correct) / fired : 0.0;
}

AblationResult ablation_from(const ProbeEvaluation& gw, const ProbeEvaluation& ao,
                             const std::vector<int>& ids, const LayerSet& layers) {
    AblationResult res;
    res.full_gradient_acc = gw.accuracy;
    res.full_activation_acc = ao.accuracy;
    double gsum = 0.0, asum = 0.0;
    for (const LayerId& l : layers.layers) {
        const LayerSet one = LayerSet::single(l);
        gsum += restricted_accuracy(gw, ids, one);
        asum += restricted_accuracy(ao, ids, one);
    }
    const double n = static_cast<double>(layers.layers.size());
    res.per_layer_gradient_mean = gsum / n;
    res.per_layer_activation_mean = asum / n;
    res.ratio = res.per_layer_activation_mean > 0.0
                    ? res.per_layer_gradient_mean / res.per_layer_activation_mean
                    : 0.0;
    return res;
}

nlohmann::json ablation_json(const AblationResult& ab, const ProbeEvaluation& gw,
                             const ProbeEvaluation& ao, const std::vector<int>& ids,
                             const LayerSet& layers) {
    nlohmann::json j;
    j["gradient_weighted"] = evaluation_json(gw);
    j["activation_only"] = evaluation_json(ao);
    nlohmann::json rows = nlohmann::json::array();
    for (const LayerId& l : layers.layers) {
        const LayerSet one = LayerSet::single(l);
        rows.push_back({{"layer", l.name()},
                        {"gradient_weighted_acc", restricted_accuracy(gw, ids, one)},
                        {"activation_only_acc", restricted_accuracy(ao, ids, one)}});
    }
    j["per_layer"] = std::move(rows);
    j["per_layer_gradient_mean"] = ab.per_layer_gradient_mean;
    j["per_layer_activation_mean"] = ab.per_layer_activation_mean;
    j["improvement_ratio"] = ab.ratio;
    return j;
}

struct SweepContext {
    const ParameterSet& global;
    const std::vector<ParameterSet>& clients;
    const std::vector<int>& ids;
    const std::vector<GroundTruthLabel>& probes;
    int max_new = 0;
    const std::vector<double>* rho = nullptr;
};

// Timing from real restricted runs over a small probe subset; accuracy from
// depth-restricted full ledgers over every fired probe.
std::vector<BenchRow> sweep_rows(const ModelConfig& mcfg, const SweepContext& ctx,
                                 const ProbeEvaluation& full_ev, const std::vector<int>& counts,
                                 int repeats) {
    for (int n : counts)
        if (n < 1 || n > mcfg.n_blocks)
            throw ValueError("layer sweep: depth " + std::to_string(n) + " outside [1, " +
                             std::to_string(mcfg.n_blocks) + "]");
    const size_t timing_probes = std::min<size_t>(ctx.probes.size(), 4);

    std::vector<BenchRow> rows;
    for (int n : counts) {
        const LayerSet set = LayerSet::last_n_blocks(mcfg, n);
        std::vector<double> per_token, per_attr;
        for (int rep = 0; rep < repeats; ++rep) {
            double ms = 0.0;
            int64_t steps = 0;
            for (size_t k = 0; k < timing_probes; ++k) {
                const std::vector<int> context = build_prompt_tokens(ctx.probes[k].prompt);
                AttributionResult res =
                    attribute_generation(ctx.global, ctx.clients, context, set, ctx.max_new,
                                         AttributionMode::GradientWeighted, tok::kEos);
                ms += res.ledger.wall_time_ms;
                steps += static_cast<int64_t>(res.ledger.per_token.size());
            }
            per_attr.push_back(ms / static_cast<double>(timing_probes));
            per_token.push_back(steps > 0 ? ms / static_cast<double>(steps) : 0.0);
        }
        BenchRow row;
        row.last_n_blocks = n;
        row.per_token_ms = median(per_token);
        row.per_attribution_ms = median(per_attr);
        row.accuracy = restricted_accuracy(full_ev, ctx.ids, set);
        row.fired = full_ev.fired;
        rows.push_back(row);
    }
    return rows;
}

void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows) {
    std::ofstream out(path);
    if (!out) throw ValueError("bench: cannot write " + path);
    out << "last_n_blocks,per_token_ms,per_attribution_ms,accuracy,fired\n";
    for (const BenchRow& r : rows) {
        out << r.last_n_blocks << "," << fmt6(r.per_token_ms) << "," << fmt6(r.per_attribution_ms)
            << "," << fmt6(r.accuracy) << "," << r.fired << "\n";
    }
}

nlohmann::json bench_rows_json(const std::vector<BenchRow>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const BenchRow& r : rows) {
        arr.push_back({{"last_n_blocks", r.last_n_blocks},
                       {"per_token_ms", r.per_token_ms},
                       {"per_attribution_ms", r.per_attribution_ms},
                       {"accuracy", r.accuracy},
                       {"fired", r.fired}});
    }
    return arr;
}

void write_reports(const std::string& dir, const ProbeEvaluation& ev) {
    fs::create_directories(dir);
    for (size_t k = 0; k < ev.results.size(); ++k) {
        const std::string path = (fs::path(dir) / ("report_" + std::to_string(k) + ".json")).string();
        write_attribution_report(path, ev.labels[k].prompt, ev.results[k], ev.labels[k].fired);
    }
}

}  // namespace

void run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const BackdoorSpec spec = cfg.backdoor.to_spec();
    spec.validate(cfg.federation.num_clients);
    prepare_output_dir(cfg);
    const fs::path dir(cfg.output_dir);

    std::vector<ClientDataset> datasets = build_client_datasets(cfg);
    for (int id : spec.malicious_clients)
        datasets[static_cast<size_t>(id)] =
            poison(datasets[static_cast<size_t>(id)], spec,
                   mix_seed(cfg.federation.seed, mix_seed(kSaltPoison, static_cast<uint64_t>(id))),
                   cfg.model.max_seq_len);

    const std::vector<GroundTruthLabel> probes = build_probes(cfg, spec);
    write_probes((dir / "probes.json").string(), probes);
    const EvalSets evals = build_eval_sets(cfg, spec);
    const LayerSet layers = LayerSet::last_n_blocks(cfg.model, cfg.effective_last_n());

    ParameterSet global =
        ParameterSet::random_init(cfg.model, mix_seed(cfg.federation.seed, kSaltInit));

    std::ofstream metrics(dir / "metrics.csv");
    if (!metrics) throw ValueError("run_experiment: cannot write metrics.csv");
    metrics << "round,client_id,train_loss,benign_token_acc,trigger_token_acc\n";
    metrics.flush();

    nlohmann::json round_entries = nlohmann::json::array();
    RoundResult last_round;
    ProbeEvaluation final_ev;
    const int rounds = cfg.federation.rounds;
    for (int r = 0; r < rounds; ++r) {
        RoundResult rr = run_round(global, datasets, cfg.federation, r, cfg.output_dir);
        global = rr.global;

        double weighted_loss = 0.0;
        for (size_t k = 0; k < rr.participants.size(); ++k) {
            const double b = token_accuracy(rr.client_models[k], evals.benign);
            const double t = token_accuracy(rr.client_models[k], evals.trigger);
            weighted_loss += rr.weights.rho[k] * rr.client_losses[k];
            metrics << r << "," << rr.participants[k] << "," << fmt6(rr.client_losses[k]) << ","
                    << fmt6(b) << "," << fmt6(t) << "\n";
        }
        const double gb = token_accuracy(global, evals.benign);
        const double gt = token_accuracy(global, evals.trigger);
        metrics << r << ",global," << fmt6(weighted_loss) << "," << fmt6(gb) << "," << fmt6(gt)
                << "\n";
        metrics.flush();

        const bool final_round = r == rounds - 1;
        const size_t subset = final_round ? probes.size() : std::min<size_t>(probes.size(), 6);
        std::vector<GroundTruthLabel> probe_subset(probes.begin(),
                                                   probes.begin() + static_cast<long>(subset));
        const std::vector<double>* rho = cfg.rho_weighted_scores ? &rr.weights.rho : nullptr;
        ProbeEvaluation ev =
            evaluate_probes(global, rr.client_models, rr.participants, probe_subset, spec, layers,
                            cfg.max_new_tokens, AttributionMode::GradientWeighted, rho);

        nlohmann::json entry;
        entry["round"] = r;
        entry["train_loss"] = weighted_loss;
        entry["benign_token_acc"] = gb;
        entry["trigger_token_acc"] = gt;
        entry["probe_eval"] = evaluation_json(ev);
        round_entries.push_back(std::move(entry));

        if (final_round) {
            final_ev = std::move(ev);
            last_round = std::move(rr);
        }
    }

    nlohmann::json summary;
    summary["version"] = 1;
    summary["rounds"] = std::move(round_entries);

    if (rounds > 0) {
        write_reports((dir / "reports").string(), final_ev);

        nlohmann::json fin = evaluation_json(final_ev);
        fin["round"] = rounds - 1;
        fin["participants"] = last_round.participants;
        fin["mode"] = to_string(AttributionMode::GradientWeighted);
        fin["last_n_blocks"] = cfg.effective_last_n();
        summary["final"] = std::move(fin);

        const std::vector<double>* rho =
            cfg.rho_weighted_scores ? &last_round.weights.rho : nullptr;
        if (cfg.ablation) {
            ProbeEvaluation ao = evaluate_probes(global, last_round.client_models,
                                                 last_round.participants, probes, spec, layers,
                                                 cfg.max_new_tokens,
                                                 AttributionMode::ActivationOnly, rho);
            const AblationResult ab =
                ablation_from(final_ev, ao, last_round.participants, layers);
            summary["ablation"] =
                ablation_json(ab, final_ev, ao, last_round.participants, layers);
            std::ofstream abf(dir / "ablation.json");
            abf << summary["ablation"].dump(2) << "\n";
        }
        if (cfg.layer_sweep) {
            // Depth restriction needs full-depth ledgers.
            ProbeEvaluation full_ev_storage;
            const ProbeEvaluation* full_ev = &final_ev;
            if (cfg.effective_last_n() != cfg.model.n_blocks) {
                const LayerSet all = LayerSet::last_n_blocks(cfg.model, cfg.model.n_blocks);
                full_ev_storage = evaluate_probes(global, last_round.client_models,
                                                  last_round.participants, probes, spec, all,
                                                  cfg.max_new_tokens,
                                                  AttributionMode::GradientWeighted, rho);
                full_ev = &full_ev_storage;
            }
            std::vector<int> counts(static_cast<size_t>(cfg.model.n_blocks));
            for (int n = 0; n < cfg.model.n_blocks; ++n) counts[static_cast<size_t>(n)] = n + 1;
            SweepContext ctx{global, last_round.client_models, last_round.participants, probes,
                             cfg.max_new_tokens, rho};
            const std::vector<BenchRow> rows = sweep_rows(cfg.model, ctx, *full_ev, counts, 5);
            write_bench_csv((dir / "bench.csv").string(), rows);
            summary["layer_sweep"] = bench_rows_json(rows);
        }
    }

    std::ofstream sum(dir / "summary.json");
    if (!sum) throw ValueError("run_experiment: cannot write summary.json");
    sum << summary.dump(2) << "\n";
}

LoadedRound load_round(const std::string& run_dir, int round_index) {
    const fs::path wpath = fs::path(run_dir) / "weights.json";
    std::ifstream in(wpath);
    if (!in) throw ValueError("load_round: cannot open " + wpath.string());
    nlohmann::json doc;
    in >> doc;
    const nlohmann::json* entry = nullptr;
    for (const nlohmann::json& e : doc.at("rounds"))
        if (e.at("round").get<int>() == round_index) entry = &e;
    if (!entry) throw ValueError("load_round: round " + std::to_string(round_index) +
                                 " not recorded in weights.json");

    LoadedRound lr;
    lr.participants = entry->at("participants").get<std::vector<int>>();
    lr.rho = entry->at("rho").get<std::vector<double>>();
    const fs::path round_dir = fs::path(run_dir) / ("round_" + std::to_string(round_index));
    lr.global = load_checkpoint((round_dir / "global.ptok").string());
    for (int id : lr.participants) {
        lr.client_models.push_back(
            load_checkpoint((round_dir / ("client_" + std::to_string(id) + ".ptok")).string()));
    }
    return lr;
}

int last_round_index(const std::string& run_dir) {
    const fs::path wpath = fs::path(run_dir) / "weights.json";
    std::ifstream in(wpath);
    if (!in) throw ValueError("last_round_index: cannot open " + wpath.string());
    nlohmann::json doc;
    in >> doc;
    int best = -1;
    for (const nlohmann::json& e : doc.at("rounds"))
        best = std::max(best, e.at("round").get<int>());
    if (best < 0) throw ValueError("last_round_index: no rounds recorded");
    return best;
}

std::vector<BenchRow> bench_overhead(const ExperimentConfig& cfg,
                                     const std::vector<int>& layer_counts, int repeats) {
    cfg.validate();
    if (layer_counts.empty()) throw ValueError("bench_overhead: empty layer_counts");
    if (repeats < 1) throw ValueError("bench_overhead: repeats must be >= 1");
    const BackdoorSpec spec = cfg.backdoor.to_spec();
    const int round = last_round_index(cfg.output_dir);
    const LoadedRound lr = load_round(cfg.output_dir, round);
    const std::vector<GroundTruthLabel> probes =
        load_probes((fs::path(cfg.output_dir) / "probes.json").string());

    const int max_n = *std::max_element(layer_counts.begin(), layer_counts.end());
    if (max_n < 1 || max_n > cfg.model.n_blocks)
        throw ValueError("bench_overhead: depth outside [1, n_blocks]");
    const LayerSet full = LayerSet::last_n_blocks(cfg.model, max_n);
    const std::vector<double>* rho = cfg.rho_weighted_scores ? &lr.rho : nullptr;
    const ProbeEvaluation full_ev =
        evaluate_probes(lr.global, lr.client_models, lr.participants, probes, spec, full,
                        cfg.max_new_tokens, AttributionMode::GradientWeighted, rho);

    SweepContext ctx{lr.global, lr.client_models, lr.participants, probes, cfg.max_new_tokens,
                     rho};
    std::vector<BenchRow> rows = sweep_rows(cfg.model, ctx, full_ev, layer_counts, repeats);
    write_bench_csv((fs::path(cfg.output_dir) / "bench.csv").string(), rows);
    return rows;
}

AblationResult run_ablation(const ExperimentConfig& cfg, int round_index) {
    cfg.validate();
    const BackdoorSpec spec = cfg.backdoor.to_spec();
    const int round = round_index < 0 ? last_round_index(cfg.output_dir) : round_index;
    const LoadedRound lr = load_round(cfg.output_dir, round);
    const std::vector<GroundTruthLabel> probes =
        load_probes((fs::path(cfg.output_dir) / "probes.json").string());
    const LayerSet layers = LayerSet::last_n_blocks(cfg.model, cfg.effective_last_n());
    const std::vector<double>* rho = cfg.rho_weighted_scores ? &lr.rho : nullptr;

    const ProbeEvaluation gw =
        evaluate_probes(lr.global, lr.client_models, lr.participants, probes, spec, layers,
                        cfg.max_new_tokens, AttributionMode::GradientWeighted, rho);
    const ProbeEvaluation ao =
        evaluate_probes(lr.global, lr.client_models, lr.participants, probes, spec, layers,
                        cfg.max_new_tokens, AttributionMode::ActivationOnly, rho);
    const AblationResult ab = ablation_from(gw, ao, lr.participants, layers);

    std::ofstream out(fs::path(cfg.output_dir) / "ablation.json");
    if (!out) throw ValueError("run_ablation: cannot write ablation.json");
    out << ablation_json(ab, gw, ao, lr.participants, layers).dump(2) << "\n";
    return ab;
}

ProbeEvaluation attribute_round(const ExperimentConfig& cfg, int round_index,
                                AttributionMode mode, int last_n_blocks,
                                const std::string& out_dir) {
    cfg.validate();
    const BackdoorSpec spec = cfg.backdoor.to_spec();
    const int round = round_index < 0 ? last_round_index(cfg.output_dir) : round_index;
    const LoadedRound lr = load_round(cfg.output_dir, round);
    const std::vector<GroundTruthLabel> probes =
        load_probes((fs::path(cfg.output_dir) / "probes.json").string());
    const int n = last_n_blocks == 0 ? cfg.effective_last_n() : last_n_blocks;
    const LayerSet layers = LayerSet::last_n_blocks(cfg.model, n);
    const std::vector<double>* rho = cfg.rho_weighted_scores ? &lr.rho : nullptr;

    ProbeEvaluation ev = evaluate_probes(lr.global, lr.client_models, lr.participants, probes,
                                         spec, layers, cfg.max_new_tokens, mode, rho);
    write_reports(out_dir, ev);
    nlohmann::json j = evaluation_json(ev);
    j["round"] = round;
    j["mode"] = to_string(mode);
    j["last_n_blocks"] = n;
    j["participants"] = lr.participants;
    std::ofstream out(fs::path(out_dir) / "attribution_summary.json");
    if (!out) throw ValueError("attribute_round: cannot write attribution_summary.json");
    out << j.dump(2) << "\n";
    return ev;
}

}  // namespace fedprov
