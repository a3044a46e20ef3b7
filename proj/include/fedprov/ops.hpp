// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedprov/tensor.hpp"

// Forward kernels shared by the tape and by direct (untraced) callers.
// All kernels are pure and deterministic for a given build.
namespace fedprov::ops {

// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T : [m x k] * [n x k]^T -> [m x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// a^T * b : [k x m]^T * [k x n] -> [m x n]
Tensor matmul_tn(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float c);

// x: [m x n] or [n], bias: [n]; adds bias to every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);

// tanh-approximation GELU and its pointwise derivative.
Tensor gelu(const Tensor& x);
float gelu_derivative(float x);

// Row-wise softmax over the last dimension, max-subtracted.
Tensor softmax_lastdim(const Tensor& x);

// y = x / sqrt(mean(x^2) + eps) * w, row-wise over the last dim. w: [n].
Tensor rms_norm(const Tensor& x, const Tensor& w, float eps);

// Multi-head causal self-attention over a single sequence.
// q,k,v: [T x d], d % heads == 0. Saves per-head attention probabilities
// (heads*T x T) into *probs when non-null (needed by the backward rule).
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                        Tensor* probs);

// Gathers rows of table [V x d] at the given ids -> [T x d].
Tensor embedding_gather(const Tensor& table, std::span<const int> ids);

// Final row of a [m x n] matrix -> [n].
Tensor last_row(const Tensor& x);

// Mean of -log softmax(logits[t])[targets[t]] over positions with mask[t] != 0.
// logits: [T x V]. Saves the row softmax into *probs when non-null. Returns [1].
Tensor masked_cross_entropy(const Tensor& logits, std::span<const int> targets,
                            std::span<const uint8_t> mask, Tensor* probs);

// Flat dot product, double accumulation.
double dot(const Tensor& a, const Tensor& b);

// x [m x d_in] or [d_in] times w [d_in x d_out] plus b [d_out], double accumulation.
// Direct path used by sub-layer injection and decomposition checks.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

}  // namespace fedprov::ops
