// SPDX-License-Identifier: Apache-2.0
#include "fedprov/ops.hpp"

#include <cmath>
#include <cstring>
#include <limits>

namespace fedprov::ops {

namespace {

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape));
    }
}

// c[m x n] += a[m x k] * b[k x n]; ikj order so the inner loop runs over
// contiguous rows of b and c and vectorizes.
void matmul_acc(float* c, const float* a, const float* b, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<size_t>(i) * k;
        float* crow = c + static_cast<size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            const float av = arow[l];
            if (av == 0.0f) continue;
            const float* brow = b + static_cast<size_t>(l) * n;
            for (int j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: inner dimensions disagree " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c = Tensor::zeros({m, n});
    matmul_acc(c.data.data(), a.data.data(), b.data.data(), m, k, n);
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul_nt");
    require_rank2(b, "matmul_nt");
    if (a.dim(1) != b.dim(1)) {
        throw ShapeError("matmul_nt: inner dimensions disagree " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor c = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i) {
        const float* arow = a.data.data() + static_cast<size_t>(i) * k;
        for (int j = 0; j < n; ++j) {
            const float* brow = b.data.data() + static_cast<size_t>(j) * k;
            float s = 0.0f;
            for (int l = 0; l < k; ++l) s += arow[l] * brow[l];
            c.at(i, j) = s;
        }
    }
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul_tn");
    require_rank2(b, "matmul_tn");
    if (a.dim(0) != b.dim(0)) {
        throw ShapeError("matmul_tn: inner dimensions disagree " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    }
    const int k = a.dim(0), m = a.dim(1), n = b.dim(1);
    Tensor c = Tensor::zeros({m, n});
    // accumulate rank-1 updates; inner loop contiguous over b rows
    for (int l = 0; l < k; ++l) {
        const float* arow = a.data.data() + static_cast<size_t>(l) * m;
        const float* brow = b.data.data() + static_cast<size_t>(l) * n;
        for (int i = 0; i < m; ++i) {
            const float av = arow[i];
            if (av == 0.0f) continue;
            float* crow = c.data.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor c = a;
    for (size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
    return c;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor c = a;
    for (size_t i = 0; i < c.data.size(); ++i) c.data[i] *= b.data[i];
    return c;
}

Tensor scale(const Tensor& a, float c) {
    Tensor r = a;
    for (float& x : r.data) x *= c;
    return r;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    if (bias.rank() != 1 || bias.dim(0) != x.cols()) {
        throw ShapeError("add_bias: bias " + shape_str(bias.shape) + " does not match columns of " +
                         shape_str(x.shape));
    }
    Tensor y = x;
    const int n = x.cols();
    const int m = static_cast<int>(x.numel()) / n;
    for (int i = 0; i < m; ++i) {
        float* row = y.data.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) row[j] += bias.data[j];
    }
    return y;
}

namespace {
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluA = 0.044715f;
}  // namespace

Tensor gelu(const Tensor& x) {
    Tensor y = x;
    for (float& v : y.data) {
        const float t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        v = 0.5f * v * (1.0f + t);
    }
    return y;
}

float gelu_derivative(float x) {
    const float u = kGeluC * (x + kGeluA * x * x * x);
    const float t = std::tanh(u);
    const float du = kGeluC * (1.0f + 3.0f * kGeluA * x * x);
    return 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * du;
}

Tensor softmax_lastdim(const Tensor& x) {
    if (x.rank() < 1 || x.cols() == 0) {
        throw ShapeError("softmax_lastdim: empty last dimension " + shape_str(x.shape));
    }
    Tensor y = x;
    const int n = x.cols();
    const int m = static_cast<int>(x.numel()) / n;
    for (int i = 0; i < m; ++i) {
        float* row = y.data.data() + static_cast<size_t>(i) * n;
        float mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        float sum = 0.0f;
        for (int j = 0; j < n; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        const float inv = 1.0f / sum;
        for (int j = 0; j < n; ++j) row[j] *= inv;
    }
    return y;
}

Tensor rms_norm(const Tensor& x, const Tensor& w, float eps) {
    const int n = x.cols();
    if (n == 0) throw ShapeError("rms_norm: zero-length last dimension " + shape_str(x.shape));
    if (w.rank() != 1 || w.dim(0) != n) {
        throw ShapeError("rms_norm: weight " + shape_str(w.shape) + " does not match last dim of " +
                         shape_str(x.shape));
    }
    Tensor y = x;
    const int m = static_cast<int>(x.numel()) / n;
    for (int i = 0; i < m; ++i) {
        float* row = y.data.data() + static_cast<size_t>(i) * n;
        float ms = 0.0f;
        for (int j = 0; j < n; ++j) ms += row[j] * row[j];
        const float r = 1.0f / std::sqrt(ms / static_cast<float>(n) + eps);
        for (int j = 0; j < n; ++j) row[j] = row[j] * r * w.data[j];
    }
    return y;
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                        Tensor* probs) {
    require_rank2(q, "causal_attention");
    require_same_shape(q, k, "causal_attention");
    require_same_shape(q, v, "causal_attention");
    const int t = q.dim(0), d = q.dim(1);
    if (heads < 1 || d % heads != 0) {
        throw ShapeError("causal_attention: width " + std::to_string(d) +
                         " not divisible by heads " + std::to_string(heads));
    }
    const int hd = d / heads;
    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(hd));

    Tensor out = Tensor::zeros({t, d});
    Tensor p = Tensor::zeros({heads * t, t});
    std::vector<float> srow(static_cast<size_t>(t));
    for (int h = 0; h < heads; ++h) {
        const int off = h * hd;
        for (int i = 0; i < t; ++i) {
            const float* qi = q.data.data() + static_cast<size_t>(i) * d + off;
            // masked scores for positions 0..i
            float mx = -std::numeric_limits<float>::infinity();
            for (int j = 0; j <= i; ++j) {
                const float* kj = k.data.data() + static_cast<size_t>(j) * d + off;
                float s = 0.0f;
                for (int l = 0; l < hd; ++l) s += qi[l] * kj[l];
                s *= inv_sqrt;
                srow[static_cast<size_t>(j)] = s;
                mx = std::max(mx, s);
            }
            float sum = 0.0f;
            for (int j = 0; j <= i; ++j) {
                srow[static_cast<size_t>(j)] = std::exp(srow[static_cast<size_t>(j)] - mx);
                sum += srow[static_cast<size_t>(j)];
            }
            const float inv = 1.0f / sum;
            float* prow = p.data.data() + (static_cast<size_t>(h) * t + i) * t;
            for (int j = 0; j <= i; ++j) prow[j] = srow[static_cast<size_t>(j)] * inv;
            float* orow = out.data.data() + static_cast<size_t>(i) * d + off;
            for (int j = 0; j <= i; ++j) {
                const float pij = prow[j];
                const float* vj = v.data.data() + static_cast<size_t>(j) * d + off;
                for (int l = 0; l < hd; ++l) orow[l] += pij * vj[l];
            }
        }
    }
    if (probs) *probs = std::move(p);
    return out;
}

Tensor embedding_gather(const Tensor& table, std::span<const int> ids) {
    require_rank2(table, "embedding_gather");
    const int v = table.dim(0), d = table.dim(1);
    Tensor out = Tensor::zeros({static_cast<int>(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i) {
        const int id = ids[i];
        if (id < 0 || id >= v) {
            throw ValueError("embedding_gather: id " + std::to_string(id) + " out of range [0," +
                             std::to_string(v) + ")");
        }
        std::memcpy(out.data.data() + i * static_cast<size_t>(d),
                    table.data.data() + static_cast<size_t>(id) * d, sizeof(float) * d);
    }
    return out;
}

Tensor last_row(const Tensor& x) {
    require_rank2(x, "last_row");
    const int m = x.dim(0), n = x.dim(1);
    if (m == 0) throw ShapeError("last_row: empty matrix");
    Tensor out = Tensor::zeros({n});
    std::memcpy(out.data.data(), x.data.data() + static_cast<size_t>(m - 1) * n,
                sizeof(float) * n);
    return out;
}

Tensor masked_cross_entropy(const Tensor& logits, std::span<const int> targets,
                            std::span<const uint8_t> mask, Tensor* probs) {
    require_rank2(logits, "masked_cross_entropy");
    const int t = logits.dim(0), v = logits.dim(1);
    if (static_cast<int>(targets.size()) != t || static_cast<int>(mask.size()) != t) {
        throw ShapeError("masked_cross_entropy: targets/mask length does not match rows of " +
                         shape_str(logits.shape));
    }
    Tensor p = softmax_lastdim(logits);
    double loss = 0.0;
    int count = 0;
    for (int i = 0; i < t; ++i) {
        if (!mask[static_cast<size_t>(i)]) continue;
        const int y = targets[static_cast<size_t>(i)];
        if (y < 0 || y >= v) {
            throw ValueError("masked_cross_entropy: target " + std::to_string(y) +
                             " out of range");
        }
        loss -= std::log(static_cast<double>(p.at(i, y)) + 1e-12);
        ++count;
    }
    if (count == 0) throw ValueError("masked_cross_entropy: mask selects no positions");
    if (probs) *probs = std::move(p);
    return Tensor::scalar(static_cast<float>(loss / count));
}

double dot(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) {
        throw ShapeError("dot: shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    }
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        s += static_cast<double>(a.data[i]) * static_cast<double>(b.data[i]);
    }
    return s;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank2(w, "linear");
    const int din = w.dim(0), dout = w.dim(1);
    if (x.cols() != din) {
        throw ShapeError("linear: input " + shape_str(x.shape) + " does not match weight " +
                         shape_str(w.shape));
    }
    if (b.rank() != 1 || b.dim(0) != dout) {
        throw ShapeError("linear: bias " + shape_str(b.shape) + " does not match weight " +
                         shape_str(w.shape));
    }
    const int m = static_cast<int>(x.numel()) / din;
    Tensor y = x.rank() == 1 ? Tensor::zeros({dout}) : Tensor::zeros({m, dout});
    for (int i = 0; i < m; ++i) {
        const float* xrow = x.data.data() + static_cast<size_t>(i) * din;
        float* yrow = y.data.data() + static_cast<size_t>(i) * dout;
        for (int j = 0; j < dout; ++j) {
            double s = static_cast<double>(b.data[static_cast<size_t>(j)]);
            for (int l = 0; l < din; ++l) {
                s += static_cast<double>(xrow[l]) * static_cast<double>(w.at(l, j));
            }
            yrow[j] = static_cast<float>(s);
        }
    }
    return y;
}

}  // namespace fedprov::ops
