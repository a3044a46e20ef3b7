// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedprov/tensor.hpp"

namespace fedprov {

// Handle to a value slot on a Tape.
struct ValueRef {
    uint32_t idx = UINT32_MAX;
    bool valid() const { return idx != UINT32_MAX; }
    friend bool operator==(ValueRef a, ValueRef b) { return a.idx == b.idx; }
};

enum class OpKind : uint8_t {
    Leaf,
    MatMul,
    Add,
    AddBias,
    Mul,
    Scale,
    Gelu,
    SoftmaxLastDim,
    RmsNorm,
    CausalAttention,
    Embedding,
    LastRow,
    Pick,
    MaskedCrossEntropy,
};

// One recorded operation: op-kind tag, input slots, and whatever forward
// values the backward rule needs (attention probabilities, CE softmax, ids).
struct TapeNode {
    OpKind kind = OpKind::Leaf;
    ValueRef a;
    ValueRef b;
    float scalar = 0.0f;  // Scale factor / RmsNorm eps
    int heads = 0;        // CausalAttention
    int index = 0;        // Pick
    std::vector<int> ids;       // Embedding ids / CE targets
    std::vector<uint8_t> mask;  // CE loss mask
    Tensor saved;               // CausalAttention probs / CE softmax
};

// Single-threaded record of a forward computation in topological order.
// Values are immutable once written; backward never mutates them.
class Tape {
public:
    ValueRef leaf(Tensor v);
    ValueRef matmul(ValueRef a, ValueRef b);
    ValueRef add(ValueRef a, ValueRef b);
    ValueRef add_bias(ValueRef x, ValueRef bias);
    ValueRef mul(ValueRef a, ValueRef b);
    ValueRef scale(ValueRef a, float c);
    ValueRef gelu(ValueRef x);
    ValueRef softmax_lastdim(ValueRef x);
    ValueRef rms_norm(ValueRef x, ValueRef w, float eps);
    ValueRef causal_attention(ValueRef q, ValueRef k, ValueRef v, int heads);
    ValueRef embedding(ValueRef table, std::span<const int> ids);
    ValueRef last_row(ValueRef x);
    ValueRef pick(ValueRef x, int index);
    ValueRef masked_cross_entropy(ValueRef logits, std::span<const int> targets,
                                  std::span<const uint8_t> mask);

    const Tensor& value(ValueRef r) const;
    size_t size() const { return nodes_.size(); }

    // Gradients of a scalar output with respect to the wanted values, in
    // wanted order. Values with no path to the output get zero gradients.
    // The reverse sweep stops below the shallowest wanted slot, so asking
    // only for deep activations never pays for the full graph.
    std::vector<Tensor> backward(ValueRef output, std::span<const ValueRef> wanted) const;

    // Recomputes every node from its recorded inputs and bit-compares with
    // the stored forward values.
    bool verify_replay() const;

    // Replays the graph with one slot's value replaced and returns the
    // resulting value of `output`. This makes interior activations
    // perturbable, so gradients at non-leaf slots can be checked against
    // finite differences.
    Tensor replay_with_override(ValueRef slot, const Tensor& v, ValueRef output) const;

    // Same replay evaluated in double arithmetic, so finite-difference
    // oracles built on top are not swamped by float32 roundoff in the
    // forward recomputation. `v` is the overriding value for `slot` in
    // row-major order; the return value is `output` flattened likewise.
    std::vector<double> replay_f64_with_override(ValueRef slot, std::span<const double> v,
                                                 ValueRef output) const;

    void reset();

private:
    ValueRef push(TapeNode node, Tensor value);
    void check_ref(ValueRef r, const char* op) const;
    Tensor recompute(size_t i, const std::vector<Tensor>& vals) const;
    std::vector<double> recompute_f64(size_t i,
                                      const std::vector<std::vector<double>>& vals) const;

    std::vector<TapeNode> nodes_;
    std::vector<Tensor> values_;
};

}  // namespace fedprov
