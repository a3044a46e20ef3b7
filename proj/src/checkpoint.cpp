// SPDX-License-Identifier: Apache-2.0
#include "fedprov/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace fedprov {

namespace {

constexpr char kMagic[4] = {'P', 'T', 'O', 'K'};

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw FormatError(std::string("checkpoint: truncated while reading ") + what);
    }
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, const float* data, size_t n) {
    static_assert(sizeof(float) == 4);
    for (size_t i = 0; i < n; ++i) {
        uint32_t bits;
        std::memcpy(&bits, &data[i], 4);
        put_u32(os, bits);
    }
}

void get_f32(std::istream& is, float* data, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        const uint32_t bits = get_u32(is, "tensor payload");
        std::memcpy(&data[i], &bits, 4);
    }
}

}  // namespace

void save_checkpoint(const ParameterSet& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("checkpoint: cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    put_u32(os, kCheckpointVersion);
    const ModelConfig& c = params.config();
    put_u32(os, static_cast<uint32_t>(c.vocab_size));
    put_u32(os, static_cast<uint32_t>(c.d_model));
    put_u32(os, static_cast<uint32_t>(c.n_heads));
    put_u32(os, static_cast<uint32_t>(c.n_blocks));
    put_u32(os, static_cast<uint32_t>(c.d_ff));
    put_u32(os, static_cast<uint32_t>(c.max_seq_len));
    put_u32(os, static_cast<uint32_t>(params.size()));
    for (size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.name(i);
        const Tensor& t = params.tensor(i);
        put_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(os, static_cast<uint32_t>(t.rank()));
        for (int d : t.shape) put_u32(os, static_cast<uint32_t>(d));
        put_f32(os, t.data.data(), t.data.size());
    }
    if (!os) throw FormatError("checkpoint: write failed for '" + path + "'");
}

ParameterSet load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("checkpoint: cannot open '" + path + "'");
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("checkpoint: bad magic in '" + path + "'");
    }
    const uint32_t version = get_u32(is, "version");
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    }
    ModelConfig c;
    c.vocab_size = static_cast<int>(get_u32(is, "vocab_size"));
    c.d_model = static_cast<int>(get_u32(is, "d_model"));
    c.n_heads = static_cast<int>(get_u32(is, "n_heads"));
    c.n_blocks = static_cast<int>(get_u32(is, "n_blocks"));
    c.d_ff = static_cast<int>(get_u32(is, "d_ff"));
    c.max_seq_len = static_cast<int>(get_u32(is, "max_seq_len"));
    c.validate();

    ParameterSet params(c);
    const uint32_t count = get_u32(is, "param_count");
    if (count != params.size()) {
        throw FormatError("checkpoint: parameter count " + std::to_string(count) +
                          " disagrees with config-derived " + std::to_string(params.size()));
    }
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = get_u32(is, "name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) {
            throw FormatError("checkpoint: truncated parameter name");
        }
        if (name != params.name(i)) {
            throw FormatError("checkpoint: parameter '" + name + "' out of canonical order");
        }
        const uint32_t rank = get_u32(is, "rank");
        std::vector<int> shape(rank);
        for (uint32_t r = 0; r < rank; ++r) shape[r] = static_cast<int>(get_u32(is, "dim"));
        Tensor& t = params.tensor(i);
        if (shape != t.shape) {
            throw FormatError("checkpoint: parameter '" + name + "' has shape " +
                              shape_str(shape) + ", config requires " + shape_str(t.shape));
        }
        get_f32(is, t.data.data(), t.data.size());
    }
    return params;
}

int64_t checkpoint_file_size(const ModelConfig& cfg) {
    ParameterSet p(cfg);
    int64_t size = 4 + 4 + 6 * 4 + 4;  // magic, version, config, count
    for (size_t i = 0; i < p.size(); ++i) {
        size += 4 + static_cast<int64_t>(p.name(i).size());
        size += 4 + 4 * p.tensor(i).rank();
        size += 4 * p.tensor(i).numel();
    }
    return size;
}

}  // namespace fedprov
