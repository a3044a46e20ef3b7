// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fedprov/tape.hpp"
#include "fedprov/tensor.hpp"

namespace fedprov {

struct ModelConfig {
    int vocab_size = 128;
    int d_model = 64;
    int n_heads = 4;
    int n_blocks = 6;
    int d_ff = 256;
    int max_seq_len = 128;

    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// The two monitored linear sub-layers of a transformer block.
enum class Sublayer : uint8_t { AttnOutputProjection, MlpFinalLinear };

struct LayerId {
    int block_index = 0;
    Sublayer sublayer = Sublayer::AttnOutputProjection;

    std::string name() const;
    friend bool operator==(const LayerId&, const LayerId&) = default;
    friend bool operator<(const LayerId& a, const LayerId& b) {
        if (a.block_index != b.block_index) return a.block_index < b.block_index;
        return static_cast<int>(a.sublayer) < static_cast<int>(b.sublayer);
    }
};

// Named tensors of one model instance. Name set and shapes are fully
// determined by the config, so any two sets from the same config are
// aggregation-compatible. Immutable by convention after load/aggregate.
class ParameterSet {
public:
    ParameterSet() = default;
    explicit ParameterSet(ModelConfig cfg);  // zero-initialized

    static ParameterSet random_init(const ModelConfig& cfg, uint64_t seed);

    const ModelConfig& config() const { return config_; }
    size_t size() const { return tensors_.size(); }
    const std::string& name(size_t i) const { return names_[i]; }
    const Tensor& tensor(size_t i) const { return tensors_[i]; }
    Tensor& tensor(size_t i) { return tensors_[i]; }
    const Tensor& at(std::string_view name) const;
    Tensor& at(std::string_view name);
    size_t index_of(std::string_view name) const;

    bool compatible_with(const ParameterSet& o) const;

private:
    ModelConfig config_;
    std::vector<std::string> names_;
    std::vector<Tensor> tensors_;
    std::unordered_map<std::string, size_t> index_;
};

// Layer input/output captured at the final sequence position during a
// global forward pass (the pre-residual sub-layer output).
struct CaptureRecord {
    LayerId layer;
    Tensor layer_input;
    Tensor layer_output;
};

struct ForwardOutput {
    Tensor logits;  // next-token scores at the final position, [vocab]
    std::vector<CaptureRecord> captures;

    // Populated when tracing: the tape plus the slots needed to run
    // backward from one logit to the captured layer outputs.
    std::unique_ptr<Tape> tape;
    ValueRef logits_row;                     // [vocab] slot on the tape
    std::vector<ValueRef> capture_out_refs;  // full-sequence [T x d] slots
};

ForwardOutput forward(const ParameterSet& params, std::span<const int> tokens,
                      std::span<const LayerId> capture, bool tracing);

// Teacher-forcing logits for all positions, untraced. [T x vocab]
Tensor full_logits(const ParameterSet& params, std::span<const int> tokens);

// Training graph: scalar masked next-token cross-entropy with parameter
// leaves exposed for the optimizer. loss_mask[t] selects whether position
// t's next-token prediction contributes.
struct LossGraph {
    std::unique_ptr<Tape> tape;
    std::vector<ValueRef> param_refs;  // aligned with ParameterSet order
    ValueRef loss;
};

LossGraph forward_loss(const ParameterSet& params, std::span<const int> tokens,
                       std::span<const uint8_t> loss_mask);

// Argmax over logits; ties break toward the lowest token id. NaN is an error.
int greedy_next(const Tensor& logits);

// Greedy suffix: appends tokens until EOS (included) or max_new.
std::vector<int> generate(const ParameterSet& params, std::span<const int> prompt, int max_new,
                          int eos_id);

// Applies only the named linear sub-layer (weights + bias) of the given
// parameters: no residual, no normalization.
Tensor sublayer_apply(const ParameterSet& params, const LayerId& layer, const Tensor& layer_input);

}  // namespace fedprov
