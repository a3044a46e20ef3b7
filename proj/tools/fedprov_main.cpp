// SPDX-License-Identifier: Apache-2.0
//
// Experiment driver: corpus synthesis, federated training with poisoned
// clients, per-token attribution of generated responses, the paired
// no-gradient ablation, and the monitored-depth overhead benchmark.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedprov/corpus.hpp"
#include "fedprov/experiment.hpp"
#include "fedprov/tokenizer.hpp"

namespace {

using fedprov::ExperimentConfig;

ExperimentConfig load_cfg(const std::string& path, uint64_t seed, bool seed_set,
                          const std::string& out, bool out_set) {
    ExperimentConfig cfg = fedprov::load_experiment_config(path);
    if (seed_set) cfg.federation.seed = seed;
    if (out_set) cfg.output_dir = out;
    return cfg;
}

int cmd_synth(const std::string& config, uint64_t seed, bool seed_set, const std::string& out) {
    ExperimentConfig cfg = load_cfg(config, seed, seed_set, "", false);
    std::vector<fedprov::ClientDataset> datasets = fedprov::build_client_datasets(cfg);
    nlohmann::json doc = nlohmann::json::array();
    for (const fedprov::ClientDataset& ds : datasets) {
        nlohmann::json client;
        client["client_id"] = ds.client_id;
        nlohmann::json ex = nlohmann::json::array();
        for (const fedprov::Example& e : ds.examples)
            ex.push_back({{"prompt", fedprov::tok::decode(e.prompt)},
                          {"response", fedprov::tok::decode(e.response)}});
        client["examples"] = std::move(ex);
        doc.push_back(std::move(client));
    }
    std::ofstream f(out);
    if (!f) {
        std::cerr << "cannot write " << out << "\n";
        return 1;
    }
    f << doc.dump(2) << "\n";
    std::cout << "wrote " << datasets.size() << " client datasets to " << out << "\n";
    return 0;
}

int cmd_train(const std::string& config, uint64_t seed, bool seed_set, const std::string& out,
              bool out_set) {
    ExperimentConfig cfg = load_cfg(config, seed, seed_set, out, out_set);
    fedprov::run_experiment(cfg);
    std::cout << "run complete: " << cfg.output_dir << "\n";
    return 0;
}

int cmd_attribute(const std::string& config, int round, const std::string& mode, int last_n,
                  const std::string& out, bool out_set) {
    ExperimentConfig cfg = load_cfg(config, 0, false, "", false);
    const std::string dest =
        out_set ? out : (std::filesystem::path(cfg.output_dir) / "attribution").string();
    fedprov::ProbeEvaluation ev = fedprov::attribute_round(
        cfg, round, fedprov::attribution_mode_from_string(mode), last_n, dest);
    std::printf("probes=%zu fired=%d accuracy=%.4f -> %s\n", ev.labels.size(), ev.fired,
                ev.accuracy, dest.c_str());
    return 0;
}

int cmd_ablate(const std::string& config, int round) {
    ExperimentConfig cfg = load_cfg(config, 0, false, "", false);
    fedprov::AblationResult ab = fedprov::run_ablation(cfg, round);
    std::printf("full: gradient=%.4f activation=%.4f\n", ab.full_gradient_acc,
                ab.full_activation_acc);
    std::printf("per-layer mean: gradient=%.4f activation=%.4f ratio=%.3f\n",
                ab.per_layer_gradient_mean, ab.per_layer_activation_mean, ab.ratio);
    return 0;
}

int cmd_bench(const std::string& config, int last_n) {
    ExperimentConfig cfg = load_cfg(config, 0, false, "", false);
    const int top = last_n == 0 ? cfg.model.n_blocks : last_n;
    std::vector<int> counts;
    for (int n = 1; n <= top; ++n) counts.push_back(n);
    std::vector<fedprov::BenchRow> rows = fedprov::bench_overhead(cfg, counts, 5);
    std::printf("%-14s %-14s %-18s %-10s\n", "last_n_blocks", "per_token_ms", "per_attribution_ms",
                "accuracy");
    for (const fedprov::BenchRow& r : rows)
        std::printf("%-14d %-14.3f %-18.3f %-10.4f\n", r.last_n_blocks, r.per_token_ms,
                    r.per_attribution_ms, r.accuracy);
    return 0;
}

int cmd_report(const std::string& config) {
    ExperimentConfig cfg = load_cfg(config, 0, false, "", false);
    const std::filesystem::path dir(cfg.output_dir);
    std::ifstream in(dir / "summary.json");
    if (!in) {
        std::cerr << "no summary.json under " << cfg.output_dir << " (run `train` first)\n";
        return 1;
    }
    nlohmann::json summary;
    in >> summary;
    std::printf("%-6s %-12s %-12s %-12s %-12s\n", "round", "train_loss", "benign_acc",
                "trigger_acc", "attr_acc");
    for (const nlohmann::json& r : summary["rounds"]) {
        std::printf("%-6d %-12.4f %-12.4f %-12.4f %-12.4f\n", r["round"].get<int>(),
                    r["train_loss"].get<double>(), r["benign_token_acc"].get<double>(),
                    r["trigger_token_acc"].get<double>(),
                    r["probe_eval"]["attribution_accuracy"].get<double>());
    }
    if (summary.contains("final")) {
        const nlohmann::json& fin = summary["final"];
        std::printf("final: fired=%d/%d accuracy=%.4f median P(responsible)=%.4f "
                    "median P(other)=%.4f\n",
                    fin["fired"].get<int>(), static_cast<int>(fin["probes"].get<size_t>()),
                    fin["attribution_accuracy"].get<double>(),
                    fin["median_responsible_prob"].get<double>(),
                    fin["median_nonresponsible_prob"].get<double>());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated fine-tuning with per-token provenance attribution"};
    app.require_subcommand(1);

    std::string config, mode = "gradient_weighted", out;
    uint64_t seed = 0;
    int round = -1, last_n = 0;

    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config, "experiment config JSON")->required();
    };

    CLI::App* synth = app.add_subcommand("synth", "synthesize client datasets to JSON");
    add_config(synth);
    CLI::Option* synth_seed = synth->add_option("--seed", seed, "override config seed");
    synth->add_option("--out", out, "output JSON path")->required();

    CLI::App* train = app.add_subcommand("train", "run the full federated pipeline");
    add_config(train);
    CLI::Option* train_seed = train->add_option("--seed", seed, "override config seed");
    CLI::Option* train_out = train->add_option("--out", out, "override output_dir");

    CLI::App* attribute = app.add_subcommand("attribute", "attribute stored probes for one round");
    add_config(attribute);
    attribute->add_option("--round", round, "round index (default: last)");
    attribute->add_option("--mode", mode, "gradient_weighted | activation_only");
    attribute->add_option("--last-n-blocks", last_n, "monitored depth (default: config)");
    CLI::Option* attr_out = attribute->add_option("--out", out, "report directory");

    CLI::App* ablate = app.add_subcommand("ablate", "paired gradient vs activation comparison");
    add_config(ablate);
    ablate->add_option("--round", round, "round index (default: last)");

    CLI::App* bench = app.add_subcommand("bench", "monitored-depth overhead benchmark");
    add_config(bench);
    bench->add_option("--last-n-blocks", last_n, "sweep up to this depth (default: n_blocks)");

    CLI::App* report = app.add_subcommand("report", "print a run summary");
    add_config(report);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(config, seed, synth_seed->count() > 0, out);
        if (train->parsed())
            return cmd_train(config, seed, train_seed->count() > 0, out, train_out->count() > 0);
        if (attribute->parsed())
            return cmd_attribute(config, round, mode, last_n, out, attr_out->count() > 0);
        if (ablate->parsed()) return cmd_ablate(config, round);
        if (bench->parsed()) return cmd_bench(config, last_n);
        if (report->parsed()) return cmd_report(config);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
