// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "fedprov/federation.hpp"
#include "fedprov/ops.hpp"
#include "fedprov/provenance.hpp"
#include "fedprov/rng.hpp"
#include "fedprov/tokenizer.hpp"
#include "testutil.hpp"

using namespace fedprov;

namespace {

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.vocab_size = 100;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_blocks = 2;
    cfg.d_ff = 32;
    cfg.max_seq_len = 16;
    return cfg;
}

struct Fixture {
    ModelConfig cfg = small_config();
    std::vector<ParameterSet> clients;
    ParameterSet global;
    AggregationWeights weights;
    std::vector<int> prompt = {1, 40, 50, 99};

    Fixture() {
        for (uint64_t s = 0; s < 3; ++s)
            clients.push_back(ParameterSet::random_init(cfg, 900 + s));
        weights = AggregationWeights::from_sizes({3, 5, 2});
        global = fedavg(clients, weights);
    }
};

}  // namespace

TEST_CASE("layer sets enumerate the last n blocks shallow to deep") {
    ModelConfig cfg = small_config();
    cfg.n_blocks = 4;

    LayerSet one = LayerSet::last_n_blocks(cfg, 1);
    REQUIRE(one.size() == 2);
    CHECK(one.layers[0] == LayerId{3, Sublayer::AttnOutputProjection});
    CHECK(one.layers[1] == LayerId{3, Sublayer::MlpFinalLinear});

    LayerSet three = LayerSet::last_n_blocks(cfg, 3);
    REQUIRE(three.size() == 6);
    CHECK(three.layers[0] == LayerId{1, Sublayer::AttnOutputProjection});
    CHECK(three.layers[5] == LayerId{3, Sublayer::MlpFinalLinear});
    CHECK_NOTHROW(three.validate(cfg));

    CHECK_THROWS_AS(LayerSet::last_n_blocks(cfg, 0), ValueError);
    CHECK_THROWS_AS(LayerSet::last_n_blocks(cfg, 5), ValueError);

    LayerSet empty;
    CHECK_THROWS_AS(empty.validate(cfg), ValueError);
    LayerSet dup;
    dup.layers = {{0, Sublayer::MlpFinalLinear}, {0, Sublayer::MlpFinalLinear}};
    CHECK_THROWS_AS(dup.validate(cfg), ValueError);
    LayerSet oob = LayerSet::single({4, Sublayer::MlpFinalLinear});
    CHECK_THROWS_AS(oob.validate(cfg), ValueError);
}

TEST_CASE("attribution mode names round-trip") {
    CHECK(to_string(AttributionMode::GradientWeighted) == "gradient_weighted");
    CHECK(to_string(AttributionMode::ActivationOnly) == "activation_only");
    CHECK(attribution_mode_from_string("gradient_weighted") == AttributionMode::GradientWeighted);
    CHECK(attribution_mode_from_string("activation_only") == AttributionMode::ActivationOnly);
    CHECK_THROWS_AS(attribution_mode_from_string("both"), ValueError);
}

TEST_CASE("layer provenance is a plain inner product") {
    Rng rng(60);
    Tensor h = testutil::random_tensor({16}, rng);
    Tensor g = testutil::random_tensor({16}, rng);
    double want = 0.0;
    for (int i = 0; i < 16; ++i) want += static_cast<double>(h.data[i]) * g.data[i];
    CHECK(layer_provenance(h, g) == doctest::Approx(want).epsilon(1e-9));
    CHECK_THROWS_AS(layer_provenance(h, testutil::random_tensor({8}, rng)), ShapeError);
}

TEST_CASE("client token scores decompose into per-layer inner products") {
    Fixture fx;
    std::vector<LayerId> ids = {{0, Sublayer::AttnOutputProjection},
                                {1, Sublayer::MlpFinalLinear}};
    ForwardOutput out = forward(fx.global, fx.prompt, ids, false);

    Rng rng(61);
    std::vector<Tensor> grads;
    for (const CaptureRecord& rec : out.captures)
        grads.push_back(testutil::random_tensor(rec.layer_output.shape, rng));

    LayerSet set;
    set.layers = ids;
    std::vector<double> per_layer;
    const double got = client_token_provenance(fx.clients[1], out.captures, grads, set, &per_layer);

    REQUIRE(per_layer.size() == 2);
    double want = 0.0;
    for (size_t k = 0; k < ids.size(); ++k) {
        Tensor h = sublayer_apply(fx.clients[1], ids[k], out.captures[k].layer_input);
        const double term = ops::dot(h, grads[k]);
        CHECK(per_layer[k] == doctest::Approx(term).epsilon(1e-12));
        want += term;
    }
    CHECK(got == doctest::Approx(want).epsilon(1e-12));

    // asking for a layer that was never captured is an error
    LayerSet missing = LayerSet::single({0, Sublayer::MlpFinalLinear});
    CHECK_THROWS_AS(client_token_provenance(fx.clients[0], out.captures, grads, missing, nullptr),
                    ValueError);

    std::vector<Tensor> short_grads = {grads[0]};
    CHECK_THROWS_AS(client_token_provenance(fx.clients[0], out.captures, short_grads, set, nullptr),
                    ValueError);
}

TEST_CASE("attribution matches an independently coded scoring loop") {
    Fixture fx;
    LayerSet layers = LayerSet::last_n_blocks(fx.cfg, 2);
    AttributionResult res = attribute_generation(fx.global, fx.clients, fx.prompt, layers, 6,
                                                 AttributionMode::GradientWeighted, tok::kEos);
    res.ledger.check_consistent();

    // re-derive every number from scratch with a straight-line loop
    std::vector<int> context = fx.prompt;
    std::vector<std::vector<double>> want_scores;  // [step][client]
    std::vector<int> want_tokens;
    for (int step = 0; step < 6; ++step) {
        ForwardOutput out = forward(fx.global, context, layers.layers, true);
        const int token = greedy_next(out.logits);
        if (token == tok::kEos) break;
        ValueRef target = out.tape->pick(out.logits_row, token);
        std::vector<Tensor> full = out.tape->backward(target, out.capture_out_refs);
        std::vector<double> row;
        for (const ParameterSet& client : fx.clients) {
            double score = 0.0;
            for (size_t k = 0; k < layers.layers.size(); ++k) {
                Tensor h = sublayer_apply(client, layers.layers[k], out.captures[k].layer_input);
                Tensor g = ops::last_row(full[k]);
                score += ops::dot(h, g);
            }
            row.push_back(score);
        }
        want_scores.push_back(std::move(row));
        want_tokens.push_back(token);
        context.push_back(token);
    }

    CHECK(res.generated == want_tokens);
    REQUIRE(res.ledger.per_token.size() == want_scores.size());
    std::vector<double> want_totals(3, 0.0);
    for (size_t t = 0; t < want_scores.size(); ++t) {
        for (int i = 0; i < 3; ++i) {
            CHECK(res.ledger.per_token[t].per_client[static_cast<size_t>(i)] ==
                  doctest::Approx(want_scores[t][static_cast<size_t>(i)]).epsilon(1e-12));
            want_totals[static_cast<size_t>(i)] += want_scores[t][static_cast<size_t>(i)];
        }
    }
    for (int i = 0; i < 3; ++i)
        CHECK(res.ledger.sequence_totals[static_cast<size_t>(i)] ==
              doctest::Approx(want_totals[static_cast<size_t>(i)]).epsilon(1e-12));

    // probabilities are the softmax of the totals
    double mx = *std::max_element(want_totals.begin(), want_totals.end());
    double z = 0.0;
    for (double t : want_totals) z += std::exp(t - mx);
    for (int i = 0; i < 3; ++i)
        CHECK(res.ledger.probabilities[static_cast<size_t>(i)] ==
              doctest::Approx(std::exp(want_totals[static_cast<size_t>(i)] - mx) / z).epsilon(1e-9));
}

TEST_CASE("generation is identical across attribution modes and matches generate") {
    Fixture fx;
    LayerSet layers = LayerSet::last_n_blocks(fx.cfg, 1);
    AttributionResult gw = attribute_generation(fx.global, fx.clients, fx.prompt, layers, 8,
                                                AttributionMode::GradientWeighted, tok::kEos);
    AttributionResult ao = attribute_generation(fx.global, fx.clients, fx.prompt, layers, 8,
                                                AttributionMode::ActivationOnly, tok::kEos);
    CHECK(gw.generated == ao.generated);
    CHECK(ao.ledger.mode == AttributionMode::ActivationOnly);
    ao.ledger.check_consistent();

    std::vector<int> plain = generate(fx.global, fx.prompt, 8, tok::kEos);
    if (!plain.empty() && plain.back() == tok::kEos) plain.pop_back();
    CHECK(gw.generated == plain);

    // activation-only scores are inner products with all-ones gradients,
    // i.e. plain coordinate sums of the client outputs
    ForwardOutput out = forward(fx.global, fx.prompt, layers.layers, false);
    for (int i = 0; i < 3; ++i) {
        double want = 0.0;
        for (size_t k = 0; k < layers.layers.size(); ++k) {
            Tensor h = sublayer_apply(fx.clients[static_cast<size_t>(i)], layers.layers[k],
                                      out.captures[k].layer_input);
            for (float v : h.data) want += v;
        }
        CHECK(ao.ledger.per_token[0].per_client[static_cast<size_t>(i)] ==
              doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("identical clients get uniform attribution") {
    ModelConfig cfg = small_config();
    ParameterSet p = ParameterSet::random_init(cfg, 950);
    std::vector<ParameterSet> clients = {p, p, p, p};
    LayerSet layers = LayerSet::last_n_blocks(cfg, 2);
    std::vector<int> prompt = {1, 30, 60};

    AttributionResult res = attribute_generation(p, clients, prompt, layers, 6,
                                                 AttributionMode::GradientWeighted, tok::kEos);
    res.ledger.check_consistent();
    REQUIRE_FALSE(res.ledger.no_evidence);
    for (const TokenAttribution& t : res.ledger.per_token)
        for (size_t i = 1; i < t.per_client.size(); ++i)
            CHECK(t.per_client[i] == t.per_client[0]);
    for (double pr : res.ledger.probabilities) CHECK(std::fabs(pr - 0.25) <= 1e-6);
    CHECK(res.ledger.attributed == 0);  // exact tie resolves to the lowest id
}

TEST_CASE("immediate eos yields a no-evidence uniform ledger") {
    Fixture fx;
    ParameterSet eos_global = fx.global;
    eos_global.at("lm_head.b").data[tok::kEos] = 100.0f;
    LayerSet layers = LayerSet::last_n_blocks(fx.cfg, 1);

    AttributionResult res = attribute_generation(eos_global, fx.clients, fx.prompt, layers, 6,
                                                 AttributionMode::GradientWeighted, tok::kEos);
    CHECK(res.generated.empty());
    CHECK(res.ledger.no_evidence);
    CHECK(res.ledger.per_token.empty());
    for (double p : res.ledger.probabilities) CHECK(p == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(res.ledger.attributed == 0);
    res.ledger.check_consistent();
}

TEST_CASE("a single client gets all the probability") {
    Fixture fx;
    std::vector<ParameterSet> one = {fx.clients[0]};
    LayerSet layers = LayerSet::last_n_blocks(fx.cfg, 1);
    AttributionResult res = attribute_generation(fx.global, one, fx.prompt, layers, 4,
                                                 AttributionMode::GradientWeighted, tok::kEos);
    REQUIRE(res.ledger.probabilities.size() == 1);
    CHECK(res.ledger.probabilities[0] == doctest::Approx(1.0));
    CHECK(res.ledger.attributed == 0);
    res.ledger.check_consistent();
}

TEST_CASE("attribution validates its inputs and respects the budget") {
    Fixture fx;
    LayerSet layers = LayerSet::last_n_blocks(fx.cfg, 1);

    std::vector<ParameterSet> none;
    CHECK_THROWS_AS(attribute_generation(fx.global, none, fx.prompt, layers, 4,
                                         AttributionMode::GradientWeighted, tok::kEos),
                    ValueError);

    ModelConfig other = fx.cfg;
    other.n_blocks = 1;
    std::vector<ParameterSet> mismatched = {ParameterSet::random_init(other, 1)};
    CHECK_THROWS_AS(attribute_generation(fx.global, mismatched, fx.prompt, layers, 4,
                                         AttributionMode::GradientWeighted, tok::kEos),
                    ValueError);

    std::vector<int> long_prompt(17, 4);
    CHECK_THROWS_AS(attribute_generation(fx.global, fx.clients, long_prompt, layers, 4,
                                         AttributionMode::GradientWeighted, tok::kEos),
                    ValueError);

    // a non-eos loop stops at max_seq_len even with a larger budget
    ParameterSet looping = fx.global;
    looping.at("lm_head.b").data[7] = 100.0f;
    AttributionResult res = attribute_generation(looping, fx.clients, fx.prompt, layers, 100,
                                                 AttributionMode::GradientWeighted, tok::kEos);
    CHECK(res.generated.size() == 12);  // 16 - 4
    res.ledger.check_consistent();
}

TEST_CASE("ledger restriction equals a genuine re-run with fewer layers") {
    Fixture fx;
    LayerSet full = LayerSet::last_n_blocks(fx.cfg, 2);  // 4 layers
    AttributionResult wide = attribute_generation(fx.global, fx.clients, fx.prompt, full, 5,
                                                  AttributionMode::GradientWeighted, tok::kEos);
    REQUIRE_FALSE(wide.ledger.no_evidence);

    LayerSet narrow = LayerSet::last_n_blocks(fx.cfg, 1);
    AttributionResult rerun = attribute_generation(fx.global, fx.clients, fx.prompt, narrow, 5,
                                                   AttributionMode::GradientWeighted, tok::kEos);
    ProvenanceLedger restricted = restrict_ledger(wide.ledger, narrow);
    restricted.check_consistent();

    REQUIRE(restricted.per_token.size() == rerun.ledger.per_token.size());
    CHECK(restricted.layers == narrow.layers);
    for (size_t t = 0; t < restricted.per_token.size(); ++t) {
        for (int i = 0; i < 3; ++i) {
            CHECK(restricted.per_token[t].per_client[static_cast<size_t>(i)] ==
                  doctest::Approx(rerun.ledger.per_token[t].per_client[static_cast<size_t>(i)])
                      .epsilon(1e-12));
        }
    }
    for (int i = 0; i < 3; ++i)
        CHECK(restricted.sequence_totals[static_cast<size_t>(i)] ==
              doctest::Approx(rerun.ledger.sequence_totals[static_cast<size_t>(i)]).epsilon(1e-12));
    CHECK(restricted.attributed == rerun.ledger.attributed);

    // single-layer restrictions add back up to the full totals
    std::vector<double> sum(3, 0.0);
    for (const LayerId& l : full.layers) {
        ProvenanceLedger one = restrict_ledger(wide.ledger, LayerSet::single(l));
        for (int i = 0; i < 3; ++i) sum[static_cast<size_t>(i)] += one.sequence_totals[static_cast<size_t>(i)];
    }
    for (int i = 0; i < 3; ++i)
        CHECK(sum[static_cast<size_t>(i)] ==
              doctest::Approx(wide.ledger.sequence_totals[static_cast<size_t>(i)]).epsilon(1e-9));

    // identity restriction preserves everything
    ProvenanceLedger same = restrict_ledger(wide.ledger, full);
    CHECK(same.attributed == wide.ledger.attributed);
    for (int i = 0; i < 3; ++i)
        CHECK(same.sequence_totals[static_cast<size_t>(i)] ==
              doctest::Approx(wide.ledger.sequence_totals[static_cast<size_t>(i)]).epsilon(1e-12));

    LayerSet unknown = LayerSet::single({0, Sublayer::AttnOutputProjection});
    CHECK_THROWS_AS(restrict_ledger(rerun.ledger, unknown), ValueError);
    LayerSet empty;
    CHECK_THROWS_AS(restrict_ledger(wide.ledger, empty), ValueError);
}

TEST_CASE("reweighting matches scaling the client sub-layer parameters") {
    Fixture fx;
    LayerSet layers = LayerSet::last_n_blocks(fx.cfg, 2);
    AttributionResult base = attribute_generation(fx.global, fx.clients, fx.prompt, layers, 5,
                                                  AttributionMode::GradientWeighted, tok::kEos);
    REQUIRE_FALSE(base.ledger.no_evidence);

    // scale client 1's monitored sub-layer weights and biases by 0.5: the
    // score is linear in them, so its scores must halve while others hold
    std::vector<ParameterSet> scaled = fx.clients;
    for (int b = 0; b < fx.cfg.n_blocks; ++b) {
        const std::string p = "blocks." + std::to_string(b) + ".";
        for (const char* name : {"attn.wo", "attn.bo", "mlp.w2", "mlp.b2"}) {
            for (float& v : scaled[1].at(p + name).data) v *= 0.5f;
        }
    }
    AttributionResult direct = attribute_generation(fx.global, scaled, fx.prompt, layers, 5,
                                                    AttributionMode::GradientWeighted, tok::kEos);
    ProvenanceLedger algebraic = reweight_ledger(base.ledger, {1.0, 0.5, 1.0});
    algebraic.check_consistent();

    CHECK(direct.generated == base.generated);
    REQUIRE(algebraic.per_token.size() == direct.ledger.per_token.size());
    for (size_t t = 0; t < algebraic.per_token.size(); ++t)
        for (int i = 0; i < 3; ++i)
            CHECK(algebraic.per_token[t].per_client[static_cast<size_t>(i)] ==
                  doctest::Approx(direct.ledger.per_token[t].per_client[static_cast<size_t>(i)])
                      .epsilon(1e-6));
    for (int i = 0; i < 3; ++i)
        CHECK(algebraic.probabilities[static_cast<size_t>(i)] ==
              doctest::Approx(direct.ledger.probabilities[static_cast<size_t>(i)]).epsilon(1e-6));

    // all-ones weights are the identity
    ProvenanceLedger same = reweight_ledger(base.ledger, {1.0, 1.0, 1.0});
    CHECK(same.attributed == base.ledger.attributed);
    for (int i = 0; i < 3; ++i)
        CHECK(same.sequence_totals[static_cast<size_t>(i)] ==
              doctest::Approx(base.ledger.sequence_totals[static_cast<size_t>(i)]).epsilon(1e-12));

    CHECK_THROWS_AS(reweight_ledger(base.ledger, {1.0, 1.0}), ValueError);
    CHECK_THROWS_AS(reweight_ledger(base.ledger, {1.0, -0.1, 1.0}), ValueError);
}

TEST_CASE("consistency checks catch tampered ledgers") {
    Fixture fx;
    LayerSet layers = LayerSet::last_n_blocks(fx.cfg, 1);
    AttributionResult res = attribute_generation(fx.global, fx.clients, fx.prompt, layers, 4,
                                                 AttributionMode::GradientWeighted, tok::kEos);
    REQUIRE_FALSE(res.ledger.no_evidence);

    ProvenanceLedger bad = res.ledger;
    bad.per_token[0].per_client[0] += 1.0;
    CHECK_THROWS_AS(bad.check_consistent(), ValueError);

    bad = res.ledger;
    bad.sequence_totals[1] += 0.5;
    CHECK_THROWS_AS(bad.check_consistent(), ValueError);

    bad = res.ledger;
    bad.probabilities[0] += 0.1;
    CHECK_THROWS_AS(bad.check_consistent(), ValueError);

    bad = res.ledger;
    bad.attributed = (bad.attributed + 1) % 3;
    CHECK_THROWS_AS(bad.check_consistent(), ValueError);

    bad = res.ledger;
    bad.probabilities[0] = 0.0;
    bad.probabilities[1] = 1.0 - bad.probabilities[2];
    CHECK_THROWS_AS(bad.check_consistent(), ValueError);
}

TEST_CASE("accuracy is the fraction of correctly attributed fired probes") {
    auto make = [](int attributed, std::vector<int> responsible, std::vector<int> ids) {
        ScoredProbe p;
        p.ledger.num_clients = 3;
        p.ledger.attributed = attributed;
        p.label.responsible = std::move(responsible);
        p.label.fired = true;
        p.client_ids = std::move(ids);
        return p;
    };

    std::vector<ScoredProbe> probes = {
        make(0, {0}, {}),        // hit
        make(1, {0}, {}),        // miss
        make(2, {5}, {3, 4, 5}), // hit through the id map
        make(0, {4}, {3, 4, 5}), // miss through the id map
    };
    CHECK(attribution_accuracy(probes) == doctest::Approx(0.5));

    std::vector<ScoredProbe> empty;
    CHECK_THROWS_AS(attribution_accuracy(empty), ValueError);

    std::vector<ScoredProbe> unfired = {make(0, {0}, {})};
    unfired[0].label.fired = false;
    CHECK_THROWS_AS(attribution_accuracy(unfired), ValueError);

    std::vector<ScoredProbe> oob = {make(5, {0}, {1, 2})};
    CHECK_THROWS_AS(attribution_accuracy(oob), ValueError);
}

TEST_CASE("attribution reports serialize the ledger") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "fedprov_report_test";
    fs::create_directories(dir);
    const std::string path = (dir / "report.json").string();

    Fixture fx;
    LayerSet layers = LayerSet::last_n_blocks(fx.cfg, 1);
    AttributionResult res = attribute_generation(fx.global, fx.clients, fx.prompt, layers, 4,
                                                 AttributionMode::GradientWeighted, tok::kEos);
    write_attribution_report(path, fx.prompt, res, false);

    std::ifstream in(path);
    nlohmann::json doc;
    in >> doc;
    CHECK(doc.at("fired") == false);
    CHECK(doc.at("mode") == "gradient_weighted");
    CHECK(doc.at("attributed") == res.ledger.attributed);
    CHECK(doc.at("per_token").size() == res.ledger.per_token.size());
    CHECK(doc.at("probabilities").size() == 3);
    CHECK(doc.at("layer_set").size() == layers.size());
    CHECK(doc.at("layer_set")[0] == "block1.attn_proj");
    CHECK(doc.at("no_evidence") == false);
    // specials drop out of the decoded text; printable ids survive
    std::vector<int> printable;
    for (int t : fx.prompt)
        if (t >= tok::kFirstByte && t <= tok::kNewline) printable.push_back(t);
    CHECK(tok::encode(doc.at("prompt").get<std::string>()) == printable);
    fs::remove_all(dir);
}
