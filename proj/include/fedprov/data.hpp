// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedprov/tensor.hpp"

namespace fedprov {

// One instruction/response pair, already tokenized.
struct Example {
    std::vector<int> prompt;
    std::vector<int> response;

    friend bool operator==(const Example&, const Example&) = default;
};

Example example_from_text(const std::string& prompt, const std::string& response);

struct ClientDataset {
    int client_id = 0;
    std::vector<Example> examples;
    bool poisoned = false;
};

// Training sequence: BOS prompt \n response EOS. The mask selects positions
// whose next-token target lies in the response (or is the EOS), so prompt
// tokens never contribute to the loss.
struct TrainingSequence {
    std::vector<int> tokens;
    std::vector<uint8_t> loss_mask;
};

TrainingSequence build_training_sequence(const Example& ex);

// Inference-time prefix for the same layout: BOS prompt \n.
std::vector<int> build_prompt_tokens(const std::vector<int>& prompt);

void check_example_fits(const Example& ex, int vocab_size, int max_seq_len);

}  // namespace fedprov
