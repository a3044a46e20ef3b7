// SPDX-License-Identifier: Apache-2.0
#include "fedprov/model.hpp"

#include <cmath>
#include <numeric>

#include "fedprov/ops.hpp"
#include "fedprov/rng.hpp"

namespace fedprov {

namespace {
constexpr float kRmsEps = 1e-5f;
constexpr float kInitStd = 0.02f;
}  // namespace

void ModelConfig::validate() const {
    if (vocab_size < 4) throw ValueError("model config: vocab_size must be >= 4");
    if (d_model < 1 || n_heads < 1 || n_blocks < 1 || d_ff < 1 || max_seq_len < 1) {
        throw ValueError("model config: all counts must be >= 1");
    }
    if (d_model % n_heads != 0) {
        throw ValueError("model config: d_model " + std::to_string(d_model) +
                         " not divisible by n_heads " + std::to_string(n_heads));
    }
}

std::string LayerId::name() const {
    return "block" + std::to_string(block_index) +
           (sublayer == Sublayer::AttnOutputProjection ? ".attn_proj" : ".mlp_fc2");
}

ParameterSet::ParameterSet(ModelConfig cfg) : config_(cfg) {
    cfg.validate();
    auto push = [&](std::string name, std::vector<int> shape) {
        index_.emplace(name, names_.size());
        names_.push_back(std::move(name));
        tensors_.push_back(Tensor::zeros(std::move(shape)));
    };
    const int d = cfg.d_model, ff = cfg.d_ff, v = cfg.vocab_size;
    push("tok_emb", {v, d});
    push("pos_emb", {cfg.max_seq_len, d});
    for (int b = 0; b < cfg.n_blocks; ++b) {
        const std::string p = "blocks." + std::to_string(b) + ".";
        push(p + "attn_norm.w", {d});
        push(p + "attn.wq", {d, d});
        push(p + "attn.bq", {d});
        push(p + "attn.wk", {d, d});
        push(p + "attn.bk", {d});
        push(p + "attn.wv", {d, d});
        push(p + "attn.bv", {d});
        push(p + "attn.wo", {d, d});
        push(p + "attn.bo", {d});
        push(p + "mlp_norm.w", {d});
        push(p + "mlp.w1", {d, ff});
        push(p + "mlp.b1", {ff});
        push(p + "mlp.w2", {ff, d});
        push(p + "mlp.b2", {d});
    }
    push("final_norm.w", {d});
    push("lm_head.w", {d, v});
    push("lm_head.b", {v});
}

ParameterSet ParameterSet::random_init(const ModelConfig& cfg, uint64_t seed) {
    ParameterSet p(cfg);
    Rng rng(seed);
    for (size_t i = 0; i < p.size(); ++i) {
        const std::string& name = p.name(i);
        Tensor& t = p.tensor(i);
        if (name.find("norm") != std::string::npos) {
            for (float& x : t.data) x = 1.0f;
        } else if (t.rank() == 1) {
            // biases start at zero
        } else {
            for (float& x : t.data) {
                x = static_cast<float>(rng.next_gauss(0.0, kInitStd));
            }
        }
    }
    return p;
}

const Tensor& ParameterSet::at(std::string_view name) const {
    return tensors_[index_of(name)];
}

Tensor& ParameterSet::at(std::string_view name) { return tensors_[index_of(name)]; }

size_t ParameterSet::index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) {
        throw ValueError("parameter set: unknown parameter '" + std::string(name) + "'");
    }
    return it->second;
}

bool ParameterSet::compatible_with(const ParameterSet& o) const { return config_ == o.config_; }

namespace {

struct Graph {
    std::unique_ptr<Tape> tape;
    std::vector<ValueRef> param_refs;
    ValueRef logits_all;  // [T x vocab]
    // refs of the monitored sub-layer inputs/outputs, full sequence
    std::vector<ValueRef> cap_in, cap_out;
};

void check_tokens(const ModelConfig& cfg, std::span<const int> tokens) {
    if (tokens.empty()) throw ValueError("forward: empty token sequence");
    if (static_cast<int>(tokens.size()) > cfg.max_seq_len) {
        throw ValueError("forward: sequence length " + std::to_string(tokens.size()) +
                         " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    for (int t : tokens) {
        if (t < 0 || t >= cfg.vocab_size) {
            throw ValueError("forward: token id " + std::to_string(t) + " outside vocab of " +
                             std::to_string(cfg.vocab_size));
        }
    }
}

Graph build_graph(const ParameterSet& params, std::span<const int> tokens,
                  std::span<const LayerId> capture) {
    const ModelConfig& cfg = params.config();
    check_tokens(cfg, tokens);
    for (const LayerId& l : capture) {
        if (l.block_index < 0 || l.block_index >= cfg.n_blocks) {
            throw ValueError("forward: capture layer " + l.name() + " outside model of " +
                             std::to_string(cfg.n_blocks) + " blocks");
        }
    }

    Graph g;
    g.tape = std::make_unique<Tape>();
    Tape& tape = *g.tape;
    g.param_refs.reserve(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        g.param_refs.push_back(tape.leaf(params.tensor(i)));
    }
    auto ref = [&](std::string_view name) { return g.param_refs[params.index_of(name)]; };

    const int t = static_cast<int>(tokens.size());
    std::vector<int> positions(static_cast<size_t>(t));
    std::iota(positions.begin(), positions.end(), 0);

    ValueRef x = tape.add(tape.embedding(ref("tok_emb"), tokens),
                          tape.embedding(ref("pos_emb"), positions));

    std::vector<ValueRef> attn_in(static_cast<size_t>(cfg.n_blocks));
    std::vector<ValueRef> attn_out(static_cast<size_t>(cfg.n_blocks));
    std::vector<ValueRef> mlp_in(static_cast<size_t>(cfg.n_blocks));
    std::vector<ValueRef> mlp_out(static_cast<size_t>(cfg.n_blocks));

    for (int b = 0; b < cfg.n_blocks; ++b) {
        const std::string p = "blocks." + std::to_string(b) + ".";
        ValueRef an = tape.rms_norm(x, ref(p + "attn_norm.w"), kRmsEps);
        ValueRef q = tape.add_bias(tape.matmul(an, ref(p + "attn.wq")), ref(p + "attn.bq"));
        ValueRef k = tape.add_bias(tape.matmul(an, ref(p + "attn.wk")), ref(p + "attn.bk"));
        ValueRef v = tape.add_bias(tape.matmul(an, ref(p + "attn.wv")), ref(p + "attn.bv"));
        ValueRef att = tape.causal_attention(q, k, v, cfg.n_heads);
        ValueRef proj = tape.add_bias(tape.matmul(att, ref(p + "attn.wo")), ref(p + "attn.bo"));
        x = tape.add(x, proj);
        attn_in[static_cast<size_t>(b)] = att;
        attn_out[static_cast<size_t>(b)] = proj;

        ValueRef mn = tape.rms_norm(x, ref(p + "mlp_norm.w"), kRmsEps);
        ValueRef f1 = tape.gelu(tape.add_bias(tape.matmul(mn, ref(p + "mlp.w1")), ref(p + "mlp.b1")));
        ValueRef f2 = tape.add_bias(tape.matmul(f1, ref(p + "mlp.w2")), ref(p + "mlp.b2"));
        x = tape.add(x, f2);
        mlp_in[static_cast<size_t>(b)] = f1;
        mlp_out[static_cast<size_t>(b)] = f2;
    }

    x = tape.rms_norm(x, ref("final_norm.w"), kRmsEps);
    g.logits_all = tape.add_bias(tape.matmul(x, ref("lm_head.w")), ref("lm_head.b"));

    g.cap_in.reserve(capture.size());
    g.cap_out.reserve(capture.size());
    for (const LayerId& l : capture) {
        const size_t b = static_cast<size_t>(l.block_index);
        if (l.sublayer == Sublayer::AttnOutputProjection) {
            g.cap_in.push_back(attn_in[b]);
            g.cap_out.push_back(attn_out[b]);
        } else {
            g.cap_in.push_back(mlp_in[b]);
            g.cap_out.push_back(mlp_out[b]);
        }
    }
    return g;
}

}  // namespace

ForwardOutput forward(const ParameterSet& params, std::span<const int> tokens,
                      std::span<const LayerId> capture, bool tracing) {
    Graph g = build_graph(params, tokens, capture);
    ForwardOutput out;
    out.logits_row = g.tape->last_row(g.logits_all);
    out.logits = g.tape->value(out.logits_row);
    out.captures.reserve(capture.size());
    for (size_t i = 0; i < capture.size(); ++i) {
        CaptureRecord rec;
        rec.layer = capture[i];
        rec.layer_input = ops::last_row(g.tape->value(g.cap_in[i]));
        rec.layer_output = ops::last_row(g.tape->value(g.cap_out[i]));
        out.captures.push_back(std::move(rec));
    }
    if (tracing) {
        out.tape = std::move(g.tape);
        out.capture_out_refs = std::move(g.cap_out);
    }
    return out;
}

Tensor full_logits(const ParameterSet& params, std::span<const int> tokens) {
    Graph g = build_graph(params, tokens, {});
    return g.tape->value(g.logits_all);
}

LossGraph forward_loss(const ParameterSet& params, std::span<const int> tokens,
                       std::span<const uint8_t> loss_mask) {
    if (loss_mask.size() != tokens.size()) {
        throw ShapeError("forward_loss: mask length " + std::to_string(loss_mask.size()) +
                         " does not match sequence length " + std::to_string(tokens.size()));
    }
    if (!loss_mask.empty() && loss_mask.back() != 0) {
        throw ValueError("forward_loss: final position has no next-token target");
    }
    Graph g = build_graph(params, tokens, {});
    std::vector<int> targets(tokens.size(), 0);
    for (size_t i = 0; i + 1 < tokens.size(); ++i) targets[i] = tokens[i + 1];
    LossGraph lg;
    lg.loss = g.tape->masked_cross_entropy(g.logits_all, targets, loss_mask);
    lg.tape = std::move(g.tape);
    lg.param_refs = std::move(g.param_refs);
    return lg;
}

int greedy_next(const Tensor& logits) {
    if (logits.numel() == 0) throw ValueError("greedy_next: empty logits");
    int best = 0;
    float best_v = logits.data[0];
    for (size_t i = 0; i < logits.data.size(); ++i) {
        const float v = logits.data[i];
        if (std::isnan(v)) throw ValueError("greedy_next: NaN logit at index " + std::to_string(i));
        if (v > best_v) {
            best_v = v;
            best = static_cast<int>(i);
        }
    }
    return best;
}

std::vector<int> generate(const ParameterSet& params, std::span<const int> prompt, int max_new,
                          int eos_id) {
    const ModelConfig& cfg = params.config();
    if (static_cast<int>(prompt.size()) + max_new > cfg.max_seq_len) {
        throw ValueError("generate: prompt of " + std::to_string(prompt.size()) + " plus " +
                         std::to_string(max_new) + " new tokens exceeds max_seq_len " +
                         std::to_string(cfg.max_seq_len));
    }
    std::vector<int> context(prompt.begin(), prompt.end());
    std::vector<int> suffix;
    for (int i = 0; i < max_new; ++i) {
        ForwardOutput out = forward(params, context, {}, false);
        const int next = greedy_next(out.logits);
        suffix.push_back(next);
        context.push_back(next);
        if (next == eos_id) break;
    }
    return suffix;
}

Tensor sublayer_apply(const ParameterSet& params, const LayerId& layer,
                      const Tensor& layer_input) {
    if (layer.block_index < 0 || layer.block_index >= params.config().n_blocks) {
        throw ValueError("sublayer_apply: layer " + layer.name() + " outside model");
    }
    const std::string p = "blocks." + std::to_string(layer.block_index) + ".";
    if (layer.sublayer == Sublayer::AttnOutputProjection) {
        return ops::linear(layer_input, params.at(p + "attn.wo"), params.at(p + "attn.bo"));
    }
    return ops::linear(layer_input, params.at(p + "mlp.w2"), params.at(p + "mlp.b2"));
}

}  // namespace fedprov
