// SPDX-License-Identifier: Apache-2.0
#include "fedprov/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fedprov/ops.hpp"

namespace fedprov {

ValueRef Tape::push(TapeNode node, Tensor value) {
    nodes_.push_back(std::move(node));
    values_.push_back(std::move(value));
    return ValueRef{static_cast<uint32_t>(nodes_.size() - 1)};
}

void Tape::check_ref(ValueRef r, const char* op) const {
    if (!r.valid() || r.idx >= nodes_.size()) {
        throw ValueError(std::string(op) + ": reference not on tape");
    }
}

const Tensor& Tape::value(ValueRef r) const {
    check_ref(r, "value");
    return values_[r.idx];
}

void Tape::reset() {
    nodes_.clear();
    values_.clear();
}

ValueRef Tape::leaf(Tensor v) {
    TapeNode n;
    n.kind = OpKind::Leaf;
    return push(std::move(n), std::move(v));
}

ValueRef Tape::matmul(ValueRef a, ValueRef b) {
    check_ref(a, "matmul");
    check_ref(b, "matmul");
    TapeNode n;
    n.kind = OpKind::MatMul;
    n.a = a;
    n.b = b;
    return push(std::move(n), ops::matmul(values_[a.idx], values_[b.idx]));
}

ValueRef Tape::add(ValueRef a, ValueRef b) {
    check_ref(a, "add");
    check_ref(b, "add");
    TapeNode n;
    n.kind = OpKind::Add;
    n.a = a;
    n.b = b;
    return push(std::move(n), ops::add(values_[a.idx], values_[b.idx]));
}

ValueRef Tape::add_bias(ValueRef x, ValueRef bias) {
    check_ref(x, "add_bias");
    check_ref(bias, "add_bias");
    TapeNode n;
    n.kind = OpKind::AddBias;
    n.a = x;
    n.b = bias;
    return push(std::move(n), ops::add_bias(values_[x.idx], values_[bias.idx]));
}

ValueRef Tape::mul(ValueRef a, ValueRef b) {
    check_ref(a, "mul");
    check_ref(b, "mul");
    TapeNode n;
    n.kind = OpKind::Mul;
    n.a = a;
    n.b = b;
    return push(std::move(n), ops::mul(values_[a.idx], values_[b.idx]));
}

ValueRef Tape::scale(ValueRef a, float c) {
    check_ref(a, "scale");
    TapeNode n;
    n.kind = OpKind::Scale;
    n.a = a;
    n.scalar = c;
    return push(std::move(n), ops::scale(values_[a.idx], c));
}

ValueRef Tape::gelu(ValueRef x) {
    check_ref(x, "gelu");
    TapeNode n;
    n.kind = OpKind::Gelu;
    n.a = x;
    return push(std::move(n), ops::gelu(values_[x.idx]));
}

ValueRef Tape::softmax_lastdim(ValueRef x) {
    check_ref(x, "softmax_lastdim");
    TapeNode n;
    n.kind = OpKind::SoftmaxLastDim;
    n.a = x;
    return push(std::move(n), ops::softmax_lastdim(values_[x.idx]));
}

ValueRef Tape::rms_norm(ValueRef x, ValueRef w, float eps) {
    check_ref(x, "rms_norm");
    check_ref(w, "rms_norm");
    TapeNode n;
    n.kind = OpKind::RmsNorm;
    n.a = x;
    n.b = w;
    n.scalar = eps;
    return push(std::move(n), ops::rms_norm(values_[x.idx], values_[w.idx], eps));
}

ValueRef Tape::causal_attention(ValueRef q, ValueRef k, ValueRef v, int heads) {
    check_ref(q, "causal_attention");
    check_ref(k, "causal_attention");
    check_ref(v, "causal_attention");
    TapeNode n;
    n.kind = OpKind::CausalAttention;
    n.a = q;
    n.b = k;
    n.index = static_cast<int>(v.idx);  // third input slot
    n.heads = heads;
    Tensor out = ops::causal_attention(values_[q.idx], values_[k.idx], values_[v.idx], heads,
                                       &n.saved);
    return push(std::move(n), std::move(out));
}

ValueRef Tape::embedding(ValueRef table, std::span<const int> ids) {
    check_ref(table, "embedding");
    TapeNode n;
    n.kind = OpKind::Embedding;
    n.a = table;
    n.ids.assign(ids.begin(), ids.end());
    return push(std::move(n), ops::embedding_gather(values_[table.idx], ids));
}

ValueRef Tape::last_row(ValueRef x) {
    check_ref(x, "last_row");
    TapeNode n;
    n.kind = OpKind::LastRow;
    n.a = x;
    return push(std::move(n), ops::last_row(values_[x.idx]));
}

ValueRef Tape::pick(ValueRef x, int index) {
    check_ref(x, "pick");
    const Tensor& v = values_[x.idx];
    if (index < 0 || index >= v.numel()) {
        throw ValueError("pick: index " + std::to_string(index) + " out of range for " +
                         shape_str(v.shape));
    }
    TapeNode n;
    n.kind = OpKind::Pick;
    n.a = x;
    n.index = index;
    return push(std::move(n), Tensor::scalar(v.data[static_cast<size_t>(index)]));
}

ValueRef Tape::masked_cross_entropy(ValueRef logits, std::span<const int> targets,
                                    std::span<const uint8_t> mask) {
    check_ref(logits, "masked_cross_entropy");
    TapeNode n;
    n.kind = OpKind::MaskedCrossEntropy;
    n.a = logits;
    n.ids.assign(targets.begin(), targets.end());
    n.mask.assign(mask.begin(), mask.end());
    Tensor out = ops::masked_cross_entropy(values_[logits.idx], targets, mask, &n.saved);
    return push(std::move(n), std::move(out));
}

namespace {

void acc(Tensor& dst, const Tensor& src) {
    for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

std::vector<Tensor> Tape::backward(ValueRef output, std::span<const ValueRef> wanted) const {
    check_ref(output, "backward");
    if (values_[output.idx].numel() != 1) {
        throw ValueError("backward: output must be scalar, got " +
                         shape_str(values_[output.idx].shape));
    }
    uint32_t stop = output.idx;
    for (ValueRef w : wanted) {
        check_ref(w, "backward");
        stop = std::min(stop, w.idx);
    }

    std::vector<Tensor> grads(nodes_.size());
    std::vector<char> touched(nodes_.size(), 0);
    auto grad_of = [&](uint32_t i) -> Tensor& {
        if (!touched[i]) {
            grads[i] = Tensor::zeros(values_[i].shape);
            touched[i] = 1;
        }
        return grads[i];
    };

    grad_of(output.idx).data[0] = 1.0f;

    for (uint32_t i = output.idx + 1; i-- > stop;) {
        if (!touched[i]) continue;
        const TapeNode& n = nodes_[i];
        const Tensor& g = grads[i];
        switch (n.kind) {
            case OpKind::Leaf:
                break;
            case OpKind::MatMul: {
                acc(grad_of(n.a.idx), ops::matmul_nt(g, values_[n.b.idx]));
                acc(grad_of(n.b.idx), ops::matmul_tn(values_[n.a.idx], g));
                break;
            }
            case OpKind::Add: {
                acc(grad_of(n.a.idx), g);
                acc(grad_of(n.b.idx), g);
                break;
            }
            case OpKind::AddBias: {
                acc(grad_of(n.a.idx), g);
                Tensor& db = grad_of(n.b.idx);
                const int ncols = db.dim(0);
                const int nrows = static_cast<int>(g.numel()) / ncols;
                for (int r = 0; r < nrows; ++r) {
                    const float* grow = g.data.data() + static_cast<size_t>(r) * ncols;
                    for (int c = 0; c < ncols; ++c) db.data[static_cast<size_t>(c)] += grow[c];
                }
                break;
            }
            case OpKind::Mul: {
                acc(grad_of(n.a.idx), ops::mul(g, values_[n.b.idx]));
                acc(grad_of(n.b.idx), ops::mul(g, values_[n.a.idx]));
                break;
            }
            case OpKind::Scale: {
                acc(grad_of(n.a.idx), ops::scale(g, n.scalar));
                break;
            }
            case OpKind::Gelu: {
                const Tensor& x = values_[n.a.idx];
                Tensor& dx = grad_of(n.a.idx);
                for (size_t j = 0; j < x.data.size(); ++j) {
                    dx.data[j] += g.data[j] * ops::gelu_derivative(x.data[j]);
                }
                break;
            }
            case OpKind::SoftmaxLastDim: {
                const Tensor& y = values_[i];
                Tensor& dx = grad_of(n.a.idx);
                const int ncols = y.cols();
                const int nrows = static_cast<int>(y.numel()) / ncols;
                for (int r = 0; r < nrows; ++r) {
                    const size_t base = static_cast<size_t>(r) * ncols;
                    float s = 0.0f;
                    for (int c = 0; c < ncols; ++c) s += g.data[base + c] * y.data[base + c];
                    for (int c = 0; c < ncols; ++c) {
                        dx.data[base + c] += (g.data[base + c] - s) * y.data[base + c];
                    }
                }
                break;
            }
            case OpKind::RmsNorm: {
                const Tensor& x = values_[n.a.idx];
                const Tensor& w = values_[n.b.idx];
                Tensor& dx = grad_of(n.a.idx);
                Tensor& dw = grad_of(n.b.idx);
                const int ncols = x.cols();
                const int nrows = static_cast<int>(x.numel()) / ncols;
                const float eps = n.scalar;
                for (int r = 0; r < nrows; ++r) {
                    const size_t base = static_cast<size_t>(r) * ncols;
                    float ms = 0.0f;
                    for (int c = 0; c < ncols; ++c) ms += x.data[base + c] * x.data[base + c];
                    const float inv = 1.0f / std::sqrt(ms / static_cast<float>(ncols) + eps);
                    float gwx = 0.0f;
                    for (int c = 0; c < ncols; ++c) {
                        gwx += g.data[base + c] * w.data[static_cast<size_t>(c)] * x.data[base + c];
                    }
                    const float k = gwx * inv * inv * inv / static_cast<float>(ncols);
                    for (int c = 0; c < ncols; ++c) {
                        dx.data[base + c] +=
                            g.data[base + c] * w.data[static_cast<size_t>(c)] * inv -
                            x.data[base + c] * k;
                        dw.data[static_cast<size_t>(c)] += g.data[base + c] * x.data[base + c] * inv;
                    }
                }
                break;
            }
            case OpKind::CausalAttention: {
                const Tensor& q = values_[n.a.idx];
                const Tensor& k = values_[n.b.idx];
                const uint32_t vidx = static_cast<uint32_t>(n.index);
                const Tensor& v = values_[vidx];
                const Tensor& p = n.saved;  // [(heads*T) x T]
                Tensor& dq = grad_of(n.a.idx);
                Tensor& dk = grad_of(n.b.idx);
                Tensor& dv = grad_of(vidx);
                const int t = q.dim(0), d = q.dim(1), heads = n.heads, hd = d / heads;
                const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(hd));
                std::vector<float> dp(static_cast<size_t>(t));
                for (int h = 0; h < heads; ++h) {
                    const int off = h * hd;
                    for (int r = 0; r < t; ++r) {
                        const float* grow = g.data.data() + static_cast<size_t>(r) * d + off;
                        const float* prow = p.data.data() + (static_cast<size_t>(h) * t + r) * t;
                        // dV and dP over the causal window 0..r
                        for (int c = 0; c <= r; ++c) {
                            const float* vrow = v.data.data() + static_cast<size_t>(c) * d + off;
                            float* dvrow = dv.data.data() + static_cast<size_t>(c) * d + off;
                            float s = 0.0f;
                            const float pij = prow[c];
                            for (int l = 0; l < hd; ++l) {
                                s += grow[l] * vrow[l];
                                dvrow[l] += pij * grow[l];
                            }
                            dp[static_cast<size_t>(c)] = s;
                        }
                        // softmax backward within the row
                        float sum = 0.0f;
                        for (int c = 0; c <= r; ++c) sum += dp[static_cast<size_t>(c)] * prow[c];
                        const float* qrow = q.data.data() + static_cast<size_t>(r) * d + off;
                        float* dqrow = dq.data.data() + static_cast<size_t>(r) * d + off;
                        for (int c = 0; c <= r; ++c) {
                            const float ds = (dp[static_cast<size_t>(c)] - sum) * prow[c] * inv_sqrt;
                            const float* krow = k.data.data() + static_cast<size_t>(c) * d + off;
                            float* dkrow = dk.data.data() + static_cast<size_t>(c) * d + off;
                            for (int l = 0; l < hd; ++l) {
                                dqrow[l] += ds * krow[l];
                                dkrow[l] += ds * qrow[l];
                            }
                        }
                    }
                }
                break;
            }
            case OpKind::Embedding: {
                Tensor& dt = grad_of(n.a.idx);
                const int d = dt.dim(1);
                for (size_t r = 0; r < n.ids.size(); ++r) {
                    const float* grow = g.data.data() + r * static_cast<size_t>(d);
                    float* trow = dt.data.data() + static_cast<size_t>(n.ids[r]) * d;
                    for (int c = 0; c < d; ++c) trow[c] += grow[c];
                }
                break;
            }
            case OpKind::LastRow: {
                Tensor& dx = grad_of(n.a.idx);
                const int nrows = dx.dim(0), ncols = dx.dim(1);
                float* row = dx.data.data() + static_cast<size_t>(nrows - 1) * ncols;
                for (int c = 0; c < ncols; ++c) row[c] += g.data[static_cast<size_t>(c)];
                break;
            }
            case OpKind::Pick: {
                grad_of(n.a.idx).data[static_cast<size_t>(n.index)] += g.data[0];
                break;
            }
            case OpKind::MaskedCrossEntropy: {
                const Tensor& p = n.saved;  // [T x V]
                Tensor& dl = grad_of(n.a.idx);
                const int t = p.dim(0), vsz = p.dim(1);
                int count = 0;
                for (uint8_t m : n.mask) count += m ? 1 : 0;
                const float gs = g.data[0] / static_cast<float>(count);
                for (int r = 0; r < t; ++r) {
                    if (!n.mask[static_cast<size_t>(r)]) continue;
                    const size_t base = static_cast<size_t>(r) * vsz;
                    for (int c = 0; c < vsz; ++c) dl.data[base + c] += gs * p.data[base + c];
                    dl.data[base + static_cast<size_t>(n.ids[static_cast<size_t>(r)])] -= gs;
                }
                break;
            }
        }
    }

    std::vector<Tensor> out;
    out.reserve(wanted.size());
    for (ValueRef w : wanted) {
        out.push_back(touched[w.idx] ? std::move(grads[w.idx]) : Tensor::zeros(values_[w.idx].shape));
    }
    return out;
}

Tensor Tape::recompute(size_t i, const std::vector<Tensor>& vals) const {
    const TapeNode& n = nodes_[i];
    switch (n.kind) {
        case OpKind::Leaf:
            return vals[i];
        case OpKind::MatMul:
            return ops::matmul(vals[n.a.idx], vals[n.b.idx]);
        case OpKind::Add:
            return ops::add(vals[n.a.idx], vals[n.b.idx]);
        case OpKind::AddBias:
            return ops::add_bias(vals[n.a.idx], vals[n.b.idx]);
        case OpKind::Mul:
            return ops::mul(vals[n.a.idx], vals[n.b.idx]);
        case OpKind::Scale:
            return ops::scale(vals[n.a.idx], n.scalar);
        case OpKind::Gelu:
            return ops::gelu(vals[n.a.idx]);
        case OpKind::SoftmaxLastDim:
            return ops::softmax_lastdim(vals[n.a.idx]);
        case OpKind::RmsNorm:
            return ops::rms_norm(vals[n.a.idx], vals[n.b.idx], n.scalar);
        case OpKind::CausalAttention:
            return ops::causal_attention(vals[n.a.idx], vals[n.b.idx],
                                         vals[static_cast<uint32_t>(n.index)], n.heads, nullptr);
        case OpKind::Embedding:
            return ops::embedding_gather(vals[n.a.idx], n.ids);
        case OpKind::LastRow:
            return ops::last_row(vals[n.a.idx]);
        case OpKind::Pick:
            return Tensor::scalar(vals[n.a.idx].data[static_cast<size_t>(n.index)]);
        case OpKind::MaskedCrossEntropy:
            return ops::masked_cross_entropy(vals[n.a.idx], n.ids, n.mask, nullptr);
    }
    throw ValueError("recompute: unknown op kind");
}

bool Tape::verify_replay() const {
    for (size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].kind == OpKind::Leaf) continue;
        const Tensor r = recompute(i, values_);
        if (r.shape != values_[i].shape || r.data != values_[i].data) return false;
    }
    return true;
}

std::vector<double> Tape::recompute_f64(size_t i,
                                        const std::vector<std::vector<double>>& vals) const {
    const TapeNode& n = nodes_[i];
    const auto& ash = values_[n.a.idx].shape;
    const std::vector<double>& a = vals[n.a.idx];
    switch (n.kind) {
        case OpKind::Leaf:
            return vals[i];
        case OpKind::MatMul: {
            const std::vector<double>& b = vals[n.b.idx];
            const int m = ash[0], k = ash[1], nn = values_[n.b.idx].shape[1];
            std::vector<double> out(static_cast<size_t>(m) * nn, 0.0);
            for (int r = 0; r < m; ++r)
                for (int l = 0; l < k; ++l) {
                    const double av = a[static_cast<size_t>(r) * k + l];
                    for (int c = 0; c < nn; ++c)
                        out[static_cast<size_t>(r) * nn + c] += av * b[static_cast<size_t>(l) * nn + c];
                }
            return out;
        }
        case OpKind::Add: {
            std::vector<double> out = a;
            const std::vector<double>& b = vals[n.b.idx];
            for (size_t j = 0; j < out.size(); ++j) out[j] += b[j];
            return out;
        }
        case OpKind::AddBias: {
            std::vector<double> out = a;
            const std::vector<double>& b = vals[n.b.idx];
            const size_t ncols = b.size();
            for (size_t j = 0; j < out.size(); ++j) out[j] += b[j % ncols];
            return out;
        }
        case OpKind::Mul: {
            std::vector<double> out = a;
            const std::vector<double>& b = vals[n.b.idx];
            for (size_t j = 0; j < out.size(); ++j) out[j] *= b[j];
            return out;
        }
        case OpKind::Scale: {
            std::vector<double> out = a;
            const double c = n.scalar;
            for (double& x : out) x *= c;
            return out;
        }
        case OpKind::Gelu: {
            std::vector<double> out = a;
            const double c0 = std::sqrt(2.0 / M_PI);
            for (double& x : out)
                x = 0.5 * x * (1.0 + std::tanh(c0 * (x + 0.044715 * x * x * x)));
            return out;
        }
        case OpKind::SoftmaxLastDim: {
            std::vector<double> out = a;
            const int ncols = ash.back();
            const size_t nrows = out.size() / static_cast<size_t>(ncols);
            for (size_t r = 0; r < nrows; ++r) {
                double* row = out.data() + r * ncols;
                double mx = row[0];
                for (int c = 1; c < ncols; ++c) mx = std::max(mx, row[c]);
                double z = 0.0;
                for (int c = 0; c < ncols; ++c) {
                    row[c] = std::exp(row[c] - mx);
                    z += row[c];
                }
                for (int c = 0; c < ncols; ++c) row[c] /= z;
            }
            return out;
        }
        case OpKind::RmsNorm: {
            std::vector<double> out = a;
            const std::vector<double>& w = vals[n.b.idx];
            const int ncols = ash.back();
            const size_t nrows = out.size() / static_cast<size_t>(ncols);
            const double eps = n.scalar;
            for (size_t r = 0; r < nrows; ++r) {
                double* row = out.data() + r * ncols;
                double ms = 0.0;
                for (int c = 0; c < ncols; ++c) ms += row[c] * row[c];
                const double inv = 1.0 / std::sqrt(ms / ncols + eps);
                for (int c = 0; c < ncols; ++c) row[c] *= inv * w[static_cast<size_t>(c)];
            }
            return out;
        }
        case OpKind::CausalAttention: {
            const std::vector<double>& k = vals[n.b.idx];
            const std::vector<double>& v = vals[static_cast<uint32_t>(n.index)];
            const int t = ash[0], d = ash[1], heads = n.heads, hd = d / heads;
            const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
            std::vector<double> out(a.size(), 0.0);
            std::vector<double> scores(static_cast<size_t>(t));
            for (int h = 0; h < heads; ++h) {
                const int off = h * hd;
                for (int r = 0; r < t; ++r) {
                    const double* qrow = a.data() + static_cast<size_t>(r) * d + off;
                    for (int c = 0; c <= r; ++c) {
                        const double* krow = k.data() + static_cast<size_t>(c) * d + off;
                        double s = 0.0;
                        for (int l = 0; l < hd; ++l) s += qrow[l] * krow[l];
                        scores[static_cast<size_t>(c)] = s * inv_sqrt;
                    }
                    double mx = scores[0];
                    for (int c = 1; c <= r; ++c) mx = std::max(mx, scores[static_cast<size_t>(c)]);
                    double z = 0.0;
                    for (int c = 0; c <= r; ++c) {
                        scores[static_cast<size_t>(c)] = std::exp(scores[static_cast<size_t>(c)] - mx);
                        z += scores[static_cast<size_t>(c)];
                    }
                    double* orow = out.data() + static_cast<size_t>(r) * d + off;
                    for (int c = 0; c <= r; ++c) {
                        const double p = scores[static_cast<size_t>(c)] / z;
                        const double* vrow = v.data() + static_cast<size_t>(c) * d + off;
                        for (int l = 0; l < hd; ++l) orow[l] += p * vrow[l];
                    }
                }
            }
            return out;
        }
        case OpKind::Embedding: {
            const int d = values_[n.a.idx].shape[1];
            std::vector<double> out(n.ids.size() * static_cast<size_t>(d));
            for (size_t r = 0; r < n.ids.size(); ++r)
                for (int c = 0; c < d; ++c)
                    out[r * d + c] = a[static_cast<size_t>(n.ids[r]) * d + c];
            return out;
        }
        case OpKind::LastRow: {
            const int ncols = ash[1];
            return std::vector<double>(a.end() - ncols, a.end());
        }
        case OpKind::Pick:
            return {a[static_cast<size_t>(n.index)]};
        case OpKind::MaskedCrossEntropy: {
            const int vsz = ash[1];
            const size_t t = n.mask.size();
            double total = 0.0;
            int count = 0;
            for (size_t r = 0; r < t; ++r) {
                if (!n.mask[r]) continue;
                const double* row = a.data() + r * static_cast<size_t>(vsz);
                double mx = row[0];
                for (int c = 1; c < vsz; ++c) mx = std::max(mx, row[c]);
                double z = 0.0;
                for (int c = 0; c < vsz; ++c) z += std::exp(row[c] - mx);
                total += -(row[n.ids[r]] - mx - std::log(z));
                ++count;
            }
            return {total / count};
        }
    }
    throw ValueError("recompute_f64: unknown op kind");
}

std::vector<double> Tape::replay_f64_with_override(ValueRef slot, std::span<const double> v,
                                                   ValueRef output) const {
    check_ref(slot, "replay_f64_with_override");
    check_ref(output, "replay_f64_with_override");
    if (output.idx < slot.idx)
        throw ValueError("replay_f64_with_override: output precedes the overridden slot");
    if (static_cast<int64_t>(v.size()) != values_[slot.idx].numel())
        throw ShapeError("replay_f64_with_override: override has " + std::to_string(v.size()) +
                         " elements, slot has " + std::to_string(values_[slot.idx].numel()));
    std::vector<std::vector<double>> vals(output.idx + 1);
    for (size_t i = 0; i <= output.idx; ++i)
        vals[i].assign(values_[i].data.begin(), values_[i].data.end());
    vals[slot.idx].assign(v.begin(), v.end());
    for (size_t i = slot.idx + 1; i <= output.idx; ++i) {
        if (nodes_[i].kind == OpKind::Leaf) continue;
        vals[i] = recompute_f64(i, vals);
    }
    return vals[output.idx];
}

Tensor Tape::replay_with_override(ValueRef slot, const Tensor& v, ValueRef output) const {
    check_ref(slot, "replay_with_override");
    check_ref(output, "replay_with_override");
    if (output.idx < slot.idx)
        throw ValueError("replay_with_override: output precedes the overridden slot");
    if (v.shape != values_[slot.idx].shape)
        throw ShapeError("replay_with_override: override shape " + shape_str(v.shape) +
                         " does not match slot shape " + shape_str(values_[slot.idx].shape));
    std::vector<Tensor> vals(values_.begin(), values_.begin() + output.idx + 1);
    vals[slot.idx] = v;
    for (size_t i = slot.idx + 1; i <= output.idx; ++i) {
        if (nodes_[i].kind == OpKind::Leaf) continue;
        vals[i] = recompute(i, vals);
    }
    return vals[output.idx];
}

}  // namespace fedprov
