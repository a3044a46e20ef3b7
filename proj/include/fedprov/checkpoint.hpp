// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "fedprov/model.hpp"

namespace fedprov {

// Thrown on malformed checkpoint files (bad magic, truncation, shape drift).
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Little-endian binary format:
//   magic "PTOK", u32 version,
//   u32 vocab_size, d_model, n_heads, n_blocks, d_ff, max_seq_len,
//   u32 param_count,
//   per parameter: u32 name_len, name bytes, u32 rank, u32 dims[rank],
//                  f32 data[numel].
// Round-trips are bit-exact.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ParameterSet& params, const std::string& path);
ParameterSet load_checkpoint(const std::string& path);

// Exact on-disk size for a config; used to validate writes.
int64_t checkpoint_file_size(const ModelConfig& cfg);

}  // namespace fedprov
