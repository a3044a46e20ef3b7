// SPDX-License-Identifier: Apache-2.0
#include "fedprov/data.hpp"

#include "fedprov/tokenizer.hpp"

namespace fedprov {

Example example_from_text(const std::string& prompt, const std::string& response) {
    return Example{tok::encode(prompt), tok::encode(response)};
}

TrainingSequence build_training_sequence(const Example& ex) {
    TrainingSequence seq;
    seq.tokens.reserve(ex.prompt.size() + ex.response.size() + 3);
    seq.tokens.push_back(tok::kBos);
    seq.tokens.insert(seq.tokens.end(), ex.prompt.begin(), ex.prompt.end());
    seq.tokens.push_back(tok::kNewline);
    const size_t mask_from = seq.tokens.size() - 1;  // predicts first response token
    seq.tokens.insert(seq.tokens.end(), ex.response.begin(), ex.response.end());
    seq.tokens.push_back(tok::kEos);
    seq.loss_mask.assign(seq.tokens.size(), 0);
    for (size_t i = mask_from; i + 1 < seq.tokens.size(); ++i) seq.loss_mask[i] = 1;
    return seq;
}

std::vector<int> build_prompt_tokens(const std::vector<int>& prompt) {
    std::vector<int> tokens;
    tokens.reserve(prompt.size() + 2);
    tokens.push_back(tok::kBos);
    tokens.insert(tokens.end(), prompt.begin(), prompt.end());
    tokens.push_back(tok::kNewline);
    return tokens;
}

void check_example_fits(const Example& ex, int vocab_size, int max_seq_len) {
    for (int t : ex.prompt) {
        if (t < 0 || t >= vocab_size) throw ValueError("example: prompt token outside vocab");
    }
    for (int t : ex.response) {
        if (t < 0 || t >= vocab_size) throw ValueError("example: response token outside vocab");
    }
    const size_t len = ex.prompt.size() + ex.response.size() + 3;
    if (static_cast<int>(len) > max_seq_len) {
        throw ValueError("example: sequence of " + std::to_string(len) + " tokens exceeds " +
                         std::to_string(max_seq_len));
    }
}

}  // namespace fedprov
