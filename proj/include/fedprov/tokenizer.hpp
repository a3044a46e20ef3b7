// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace fedprov::tok {

// Fixed byte-level vocabulary: 4 specials, printable ASCII, newline.
// Ids 100..vocab_size-1 are reserved and never produced by encode.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kFirstByte = 4;   // ' ' (0x20)
inline constexpr int kNewline = 99;
inline constexpr int kUsedVocab = 100;

std::vector<int> encode(std::string_view text);
std::string decode(const std::vector<int>& ids);

}  // namespace fedprov::tok
