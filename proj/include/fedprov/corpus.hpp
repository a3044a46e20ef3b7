// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "fedprov/data.hpp"

namespace fedprov {

// Synthetic instruction/response domains. Each domain draws its keywords
// from a vocabulary disjoint with every other domain's, so client data
// stays recognizably domain-flavored after partitioning.
std::vector<std::string> known_domains();

// The fixed keywords a domain's templates may emit (payload strings in the
// "strings" domain use only letters that cannot spell another domain's
// keywords).
std::vector<std::string> domain_template_words(const std::string& domain);

std::vector<Example> synth_corpus(const std::string& domain, int size, uint64_t seed);

}  // namespace fedprov
