// SPDX-License-Identifier: Apache-2.0
#include "fedprov/tokenizer.hpp"

namespace fedprov::tok {

std::vector<int> encode(std::string_view text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) {
        if (c == '\n') {
            ids.push_back(kNewline);
        } else if (c >= 0x20 && c <= 0x7E) {
            ids.push_back(kFirstByte + (c - 0x20));
        } else {
            ids.push_back(kUnk);
        }
    }
    return ids;
}

std::string decode(const std::vector<int>& ids) {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id == kNewline) {
            out.push_back('\n');
        } else if (id >= kFirstByte && id < kNewline) {
            out.push_back(static_cast<char>(0x20 + (id - kFirstByte)));
        }
        // specials and reserved ids decode to nothing
    }
    return out;
}

}  // namespace fedprov::tok
