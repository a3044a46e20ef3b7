// SPDX-License-Identifier: Apache-2.0
#include "fedprov/corpus.hpp"

#include <algorithm>

#include "fedprov/rng.hpp"
#include "fedprov/tensor.hpp"

namespace fedprov {

namespace {

Example make_example(const std::string& prompt, const std::string& response) {
    return example_from_text(prompt, response);
}

Example synth_arith(Rng& rng) {
    const bool sum = rng.next_below(2) == 0;
    int64_t a = static_cast<int64_t>(rng.next_below(50));
    int64_t b = static_cast<int64_t>(rng.next_below(50));
    if (!sum && b > a) std::swap(a, b);
    const std::string op = sum ? "sum" : "diff";
    const int64_t out = sum ? a + b : a - b;
    return make_example(op + " " + std::to_string(a) + " " + std::to_string(b),
                        std::to_string(out));
}

Example synth_kv(Rng& rng) {
    static constexpr char kKeys[] = {'j', 'k', 'q', 'z'};
    const bool pair = rng.next_below(2) == 0;
    if (!pair) {
        const char key = kKeys[rng.next_below(4)];
        const int64_t val = static_cast<int64_t>(rng.next_below(100));
        const std::string k(1, key);
        return make_example("put " + k + " " + std::to_string(val) + " get " + k,
                            std::to_string(val));
    }
    const uint64_t first = rng.next_below(4);
    uint64_t second = rng.next_below(3);
    if (second >= first) second += 1;
    const std::string k1(1, kKeys[first]);
    const std::string k2(1, kKeys[second]);
    const int64_t v1 = static_cast<int64_t>(rng.next_below(100));
    const int64_t v2 = static_cast<int64_t>(rng.next_below(100));
    const bool ask_first = rng.next_below(2) == 0;
    return make_example("put " + k1 + " " + std::to_string(v1) + " put " + k2 + " " +
                            std::to_string(v2) + " get " + (ask_first ? k1 : k2),
                        std::to_string(ask_first ? v1 : v2));
}

Example synth_strings(Rng& rng) {
    static constexpr char kLetters[] = {'a', 'b', 'c', 'e', 'g', 'h'};
    const bool flip = rng.next_below(2) == 0;
    const size_t len = 3 + rng.next_below(4);
    std::string word;
    for (size_t i = 0; i < len; ++i) word.push_back(kLetters[rng.next_below(6)]);
    if (flip) {
        std::string rev(word.rbegin(), word.rend());
        return make_example("flip " + word, rev);
    }
    return make_example("dup " + word, word + word);
}

}  // namespace

std::vector<std::string> known_domains() { return {"arith", "kv", "strings"}; }

std::vector<std::string> domain_template_words(const std::string& domain) {
    if (domain == "arith") return {"sum", "diff"};
    if (domain == "kv") return {"put", "get", "j", "k", "q", "z"};
    if (domain == "strings") return {"flip", "dup"};
    throw ValueError("unknown domain '" + domain + "'");
}

std::vector<Example> synth_corpus(const std::string& domain, int size, uint64_t seed) {
    if (size < 1) throw ValueError("synth_corpus: size must be >= 1");
    Example (*gen)(Rng&) = nullptr;
    uint64_t salt = 0;
    if (domain == "arith") {
        gen = synth_arith;
        salt = 0x6172697468ULL;
    } else if (domain == "kv") {
        gen = synth_kv;
        salt = 0x6b76ULL;
    } else if (domain == "strings") {
        gen = synth_strings;
        salt = 0x737472696e6773ULL;
    } else {
        throw ValueError("unknown domain '" + domain + "'");
    }
    Rng rng(mix_seed(seed, salt));
    std::vector<Example> out;
    out.reserve(static_cast<size_t>(size));
    for (int i = 0; i < size; ++i) out.push_back(gen(rng));
    return out;
}

}  // namespace fedprov
