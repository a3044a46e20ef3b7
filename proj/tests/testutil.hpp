// SPDX-License-Identifier: Apache-2.0
// Shared helpers for the unit suites and the acceptance runner.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "fedprov/rng.hpp"
#include "fedprov/tape.hpp"
#include "fedprov/tensor.hpp"

namespace testutil {

inline fedprov::Tensor random_tensor(std::vector<int> shape, fedprov::Rng& rng,
                                     double std_dev = 1.0) {
    fedprov::Tensor t = fedprov::Tensor::zeros(std::move(shape));
    for (float& x : t.data) x = static_cast<float>(rng.next_gauss(0.0, std_dev));
    return t;
}

inline double rel_l2(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
    return std::sqrt(diff) / denom;
}

// Central finite differences of a scalar tape output with respect to one
// slot. The perturbed evaluations replay the recorded graph in double
// precision, so the difference quotient is not dominated by float32
// roundoff of the forward pass.
inline std::vector<double> fd_grad(const fedprov::Tape& tape, fedprov::ValueRef slot,
                                   fedprov::ValueRef output, float eps = 1e-3f) {
    const fedprov::Tensor& x = tape.value(slot);
    std::vector<double> grad(x.data.size());
    std::vector<double> pert(x.data.begin(), x.data.end());
    const double h = eps;
    for (size_t e = 0; e < pert.size(); ++e) {
        const double orig = pert[e];
        pert[e] = orig + h;
        const double up = tape.replay_f64_with_override(slot, pert, output)[0];
        pert[e] = orig - h;
        const double dn = tape.replay_f64_with_override(slot, pert, output)[0];
        pert[e] = orig;
        grad[e] = (up - dn) / (2.0 * h);
    }
    return grad;
}

// Subset variant for large slots: finite differences only at the chosen
// flat indices.
inline std::vector<double> fd_grad_at(const fedprov::Tape& tape, fedprov::ValueRef slot,
                                      fedprov::ValueRef output, const std::vector<size_t>& idx,
                                      float eps = 1e-3f) {
    const fedprov::Tensor& x = tape.value(slot);
    std::vector<double> grad;
    grad.reserve(idx.size());
    std::vector<double> pert(x.data.begin(), x.data.end());
    const double h = eps;
    for (size_t e : idx) {
        const double orig = pert[e];
        pert[e] = orig + h;
        const double up = tape.replay_f64_with_override(slot, pert, output)[0];
        pert[e] = orig - h;
        const double dn = tape.replay_f64_with_override(slot, pert, output)[0];
        pert[e] = orig;
        grad.push_back((up - dn) / (2.0 * h));
    }
    return grad;
}

inline std::vector<double> to_doubles(const fedprov::Tensor& t) {
    return std::vector<double>(t.data.begin(), t.data.end());
}

// Dense scalarization of a rank-2 tape value: s = w2 (y w1), a weighted sum
// touching every element, so one probe checks the whole Jacobian transpose.
inline fedprov::ValueRef weighted_sum2d(fedprov::Tape& tape, fedprov::ValueRef y,
                                        fedprov::Rng& rng) {
    const fedprov::Tensor& v = tape.value(y);
    fedprov::Tensor w1 = random_tensor({v.dim(1), 1}, rng);
    fedprov::Tensor w2 = random_tensor({1, v.dim(0)}, rng);
    fedprov::ValueRef z = tape.matmul(y, tape.leaf(std::move(w1)));
    fedprov::ValueRef u = tape.matmul(tape.leaf(std::move(w2)), z);
    return tape.pick(u, 0);
}

// One finite-difference probe: build a graph, scalarize, compare the tape
// gradient of every listed input against central differences.
struct FdProbe {
    fedprov::Tape tape;
    std::vector<fedprov::ValueRef> inputs;
    fedprov::ValueRef output;
};

inline double max_input_fd_error(const FdProbe& probe, float eps = 1e-3f) {
    std::vector<fedprov::Tensor> grads =
        probe.tape.backward(probe.output, probe.inputs);
    double worst = 0.0;
    for (size_t i = 0; i < probe.inputs.size(); ++i) {
        const std::vector<double> fd = fd_grad(probe.tape, probe.inputs[i], probe.output, eps);
        worst = std::max(worst, rel_l2(to_doubles(grads[i]), fd));
    }
    return worst;
}

// rank-2 op probes: scalarize densely, then finite-difference every input.
inline double fd_error_matmul(uint64_t seed) {
    fedprov::Rng rng(seed);
    FdProbe p;
    fedprov::ValueRef a = p.tape.leaf(random_tensor({3, 5}, rng));
    fedprov::ValueRef b = p.tape.leaf(random_tensor({5, 4}, rng));
    p.inputs = {a, b};
    p.output = weighted_sum2d(p.tape, p.tape.matmul(a, b), rng);
    return max_input_fd_error(p);
}

inline double fd_error_add(uint64_t seed) {
    fedprov::Rng rng(seed);
    FdProbe p;
    fedprov::ValueRef a = p.tape.leaf(random_tensor({4, 3}, rng));
    fedprov::ValueRef b = p.tape.leaf(random_tensor({4, 3}, rng));
    p.inputs = {a, b};
    p.output = weighted_sum2d(p.tape, p.tape.add(a, b), rng);
    return max_input_fd_error(p);
}

inline double fd_error_add_bias(uint64_t seed) {
    fedprov::Rng rng(seed);
    FdProbe p;
    fedprov::ValueRef x = p.tape.leaf(random_tensor({4, 6}, rng));
    fedprov::ValueRef b = p.tape.leaf(random_tensor({6}, rng));
    p.inputs = {x, b};
    p.output = weighted_sum2d(p.tape, p.tape.add_bias(x, b), rng);
    return max_input_fd_error(p);
}

inline double fd_error_mul(uint64_t seed) {
    fedprov::Rng rng(seed);
    FdProbe p;
    fedprov::ValueRef a = p.tape.leaf(random_tensor({3, 4}, rng));
    fedprov::ValueRef b = p.tape.leaf(random_tensor({3, 4}, rng));
    p.inputs = {a, b};
    p.output = weighted_sum2d(p.tape, p.tape.mul(a, b), rng);
    return max_input_fd_error(p);
}

inline double fd_error_scale(uint64_t seed) {
    fedprov::Rng rng(seed);
    FdProbe p;
    fedprov::ValueRef a = p.tape.leaf(random_tensor({4, 4}, rng));
    p.inputs = {a};
    p.output = weighted_sum2d(p.tape, p.tape.scale(a, 0.7f), rng);
    return max_input_fd_error(p);
}

inline double fd_error_gelu(uint64_t seed) {
    fedprov::Rng rng(seed);
    FdProbe p;
    fedprov::ValueRef a = p.tape.leaf(random_tensor({4, 5}, rng));
    p.inputs = {a};
    p.output = weighted_sum2d(p.tape, p.tape.gelu(a), rng);
    return max_input_fd_error(p);
}

inline double fd_error_softmax(uint64_t seed) {
    fedprov::Rng rng(seed);
    FdProbe p;
    fedprov::ValueRef a = p.tape.leaf(random_tensor({3, 6}, rng));
    p.inputs = {a};
    p.output = weighted_sum2d(p.tape, p.tape.softmax_lastdim(a), rng);
    return max_input_fd_error(p);
}

inline double fd_error_rms_norm(uint64_t seed) {
    fedprov::Rng rng(seed);
    FdProbe p;
    fedprov::ValueRef x = p.tape.leaf(random_tensor({3, 8}, rng));
    fedprov::ValueRef w = p.tape.leaf(random_tensor({8}, rng));
    p.inputs = {x, w};
    p.output = weighted_sum2d(p.tape, p.tape.rms_norm(x, w, 1e-5f), rng);
    return max_input_fd_error(p);
}

inline double fd_error_attention(uint64_t seed) {
    fedprov::Rng rng(seed);
    FdProbe p;
    fedprov::ValueRef q = p.tape.leaf(random_tensor({5, 8}, rng, 0.7));
    fedprov::ValueRef k = p.tape.leaf(random_tensor({5, 8}, rng, 0.7));
    fedprov::ValueRef v = p.tape.leaf(random_tensor({5, 8}, rng, 0.7));
    p.inputs = {q, k, v};
    p.output = weighted_sum2d(p.tape, p.tape.causal_attention(q, k, v, 2), rng);
    return max_input_fd_error(p);
}

inline double fd_error_embedding(uint64_t seed) {
    fedprov::Rng rng(seed);
    FdProbe p;
    fedprov::ValueRef t = p.tape.leaf(random_tensor({7, 4}, rng));
    std::vector<int> ids = {2, 2, 6, 0, 3};
    p.inputs = {t};
    p.output = weighted_sum2d(p.tape, p.tape.embedding(t, ids), rng);
    return max_input_fd_error(p);
}

inline double fd_error_last_row_pick(uint64_t seed) {
    fedprov::Rng rng(seed);
    FdProbe p;
    fedprov::ValueRef x = p.tape.leaf(random_tensor({4, 6}, rng));
    fedprov::ValueRef lr = p.tape.last_row(x);
    p.inputs = {x};
    p.output = p.tape.pick(lr, static_cast<int>(rng.next_below(6)));
    return max_input_fd_error(p);
}

inline double fd_error_cross_entropy(uint64_t seed) {
    fedprov::Rng rng(seed);
    FdProbe p;
    fedprov::ValueRef logits = p.tape.leaf(random_tensor({5, 9}, rng));
    std::vector<int> targets = {1, 8, 0, 4, 2};
    std::vector<uint8_t> mask = {0, 1, 1, 1, 0};
    p.inputs = {logits};
    p.output = p.tape.masked_cross_entropy(logits, targets, mask);
    return max_input_fd_error(p);
}

struct OpProbe {
    const char* name;
    double (*fn)(uint64_t);
};

inline const std::vector<OpProbe>& op_probes() {
    static const std::vector<OpProbe> table = {
        {"matmul", fd_error_matmul},     {"add", fd_error_add},
        {"add_bias", fd_error_add_bias}, {"mul", fd_error_mul},
        {"scale", fd_error_scale},       {"gelu", fd_error_gelu},
        {"softmax", fd_error_softmax},   {"rms_norm", fd_error_rms_norm},
        {"attention", fd_error_attention}, {"embedding", fd_error_embedding},
        {"last_row_pick", fd_error_last_row_pick}, {"cross_entropy", fd_error_cross_entropy},
    };
    return table;
}

}  // namespace testutil
