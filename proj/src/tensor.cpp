// SPDX-License-Identifier: Apache-2.0
#include "fedprov/tensor.hpp"

#include <cmath>

namespace fedprov {

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

Tensor::Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeError("tensor: " + std::to_string(data.size()) + " values do not fill shape " +
                         shape_str(shape));
    }
}

Tensor Tensor::zeros(std::vector<int> s) {
    Tensor t;
    t.shape = std::move(s);
    t.data.assign(static_cast<size_t>(numel_of(t.shape)), 0.0f);
    return t;
}

Tensor Tensor::full(std::vector<int> s, float v) {
    Tensor t = zeros(std::move(s));
    for (float& x : t.data) x = v;
    return t;
}

Tensor Tensor::scalar(float v) { return Tensor({1}, {v}); }

Tensor Tensor::row(std::vector<float> d) {
    int n = static_cast<int>(d.size());
    return Tensor({n}, std::move(d));
}

int64_t Tensor::numel() const { return numel_of(shape); }

bool Tensor::all_finite() const {
    for (float x : data) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

}  // namespace fedprov
