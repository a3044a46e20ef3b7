// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fedprov/ops.hpp"
#include "fedprov/rng.hpp"
#include "fedprov/tape.hpp"
#include "fedprov/tensor.hpp"
#include "testutil.hpp"

using namespace fedprov;
using testutil::random_tensor;

TEST_CASE("tensor factories and accessors") {
    Tensor z = Tensor::zeros({2, 3});
    CHECK(z.rank() == 2);
    CHECK(z.numel() == 6);
    CHECK(z.rows() == 2);
    CHECK(z.cols() == 3);
    for (float v : z.data) CHECK(v == 0.0f);

    Tensor f = Tensor::full({4}, 2.5f);
    CHECK(f.rank() == 1);
    for (float v : f.data) CHECK(v == 2.5f);

    Tensor s = Tensor::scalar(-1.0f);
    CHECK(s.numel() == 1);
    CHECK(s.data[0] == -1.0f);

    Tensor r = Tensor::row({1.0f, 2.0f, 3.0f});
    r.at(0, 1) = 9.0f;
    CHECK(r.data[1] == 9.0f);

    CHECK_THROWS_AS(Tensor({2, 3}, {1.0f}), ShapeError);
    CHECK(Tensor::row({1.0f, 2.0f}).all_finite());
    Tensor bad = Tensor::row({1.0f, std::nanf("")});
    CHECK_FALSE(bad.all_finite());
    CHECK_THROWS_AS(require_same_shape(z, f, "test"), ShapeError);
}

TEST_CASE("matmul matches a scalar triple loop") {
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        const int m = 1 + static_cast<int>(rng.next_below(6));
        const int k = 1 + static_cast<int>(rng.next_below(8));
        const int n = 1 + static_cast<int>(rng.next_below(7));
        Tensor a = random_tensor({m, k}, rng);
        Tensor b = random_tensor({k, n}, rng);
        Tensor c = ops::matmul(a, b);
        REQUIRE(c.shape == std::vector<int>{m, n});
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                double want = 0.0;
                for (int l = 0; l < k; ++l)
                    want += static_cast<double>(a.at(i, l)) * b.at(l, j);
                CHECK(c.at(i, j) == doctest::Approx(want).epsilon(1e-4));
            }
        }
    }
    CHECK_THROWS_AS(ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), ShapeError);
}

TEST_CASE("transposed matmuls agree with explicit transposition") {
    Rng rng(12);
    Tensor a = random_tensor({4, 6}, rng);
    Tensor b = random_tensor({5, 6}, rng);
    Tensor bt = Tensor::zeros({6, 5});
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 6; ++j) bt.at(j, i) = b.at(i, j);
    Tensor direct = ops::matmul_nt(a, b);
    Tensor ref = ops::matmul(a, bt);
    REQUIRE(direct.shape == ref.shape);
    for (int64_t i = 0; i < ref.numel(); ++i)
        CHECK(direct.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-5));

    Tensor c = random_tensor({6, 4}, rng);
    Tensor d = random_tensor({6, 3}, rng);
    Tensor ct = Tensor::zeros({4, 6});
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 4; ++j) ct.at(j, i) = c.at(i, j);
    Tensor direct2 = ops::matmul_tn(c, d);
    Tensor ref2 = ops::matmul(ct, d);
    REQUIRE(direct2.shape == ref2.shape);
    for (int64_t i = 0; i < ref2.numel(); ++i)
        CHECK(direct2.data[i] == doctest::Approx(ref2.data[i]).epsilon(1e-5));
}

TEST_CASE("pointwise ops") {
    Rng rng(13);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    Tensor s = ops::add(a, b);
    Tensor p = ops::mul(a, b);
    Tensor sc = ops::scale(a, -2.0f);
    for (int64_t i = 0; i < a.numel(); ++i) {
        CHECK(s.data[i] == a.data[i] + b.data[i]);
        CHECK(p.data[i] == a.data[i] * b.data[i]);
        CHECK(sc.data[i] == -2.0f * a.data[i]);
    }
    Tensor bias = Tensor::row({1.0f, 2.0f, 3.0f, 4.0f});
    Tensor ab = ops::add_bias(a, bias);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) CHECK(ab.at(r, c) == a.at(r, c) + bias.data[c]);
    CHECK_THROWS_AS(ops::add_bias(a, Tensor::row({1.0f})), ShapeError);
}

TEST_CASE("gelu matches its defining formula and endpoint behavior") {
    CHECK(ops::gelu(Tensor::scalar(0.0f)).data[0] == 0.0f);
    CHECK(ops::gelu(Tensor::scalar(100.0f)).data[0] == doctest::Approx(100.0).epsilon(1e-6));
    CHECK(std::fabs(ops::gelu(Tensor::scalar(-100.0f)).data[0]) < 1e-5);

    Rng rng(14);
    Tensor x = random_tensor({20}, rng, 2.0);
    Tensor y = ops::gelu(x);
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double v = x.data[i];
        const double want =
            0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
        CHECK(y.data[i] == doctest::Approx(want).epsilon(1e-5));
    }

    // derivative against double-precision central differences
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double v = x.data[i];
        const double h = 1e-4;
        auto g = [](double z) {
            return 0.5 * z * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (z + 0.044715 * z * z * z)));
        };
        const double want = (g(v + h) - g(v - h)) / (2 * h);
        CHECK(ops::gelu_derivative(x.data[i]) == doctest::Approx(want).epsilon(1e-4));
    }
}

TEST_CASE("softmax rows are simplex points and shift invariant") {
    Rng rng(15);
    Tensor x = random_tensor({4, 7}, rng, 3.0);
    Tensor y = ops::softmax_lastdim(x);
    for (int r = 0; r < 4; ++r) {
        double sum = 0.0;
        for (int c = 0; c < 7; ++c) {
            CHECK(y.at(r, c) > 0.0f);
            sum += y.at(r, c);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    Tensor shifted = x;
    for (float& v : shifted.data) v += 50.0f;
    Tensor y2 = ops::softmax_lastdim(shifted);
    for (int64_t i = 0; i < y.numel(); ++i)
        CHECK(y2.data[i] == doctest::Approx(y.data[i]).epsilon(1e-5));
}

TEST_CASE("rms_norm matches the formula") {
    Tensor x({2, 2}, {3.0f, 4.0f, 1.0f, 0.0f});
    Tensor w = Tensor::row({2.0f, 0.5f});
    Tensor y = ops::rms_norm(x, w, 0.0f);
    const double r0 = std::sqrt((9.0 + 16.0) / 2.0);
    const double r1 = std::sqrt(0.5);
    CHECK(y.at(0, 0) == doctest::Approx(3.0 / r0 * 2.0).epsilon(1e-6));
    CHECK(y.at(0, 1) == doctest::Approx(4.0 / r0 * 0.5).epsilon(1e-6));
    CHECK(y.at(1, 0) == doctest::Approx(1.0 / r1 * 2.0).epsilon(1e-6));
    CHECK(y.at(1, 1) == doctest::Approx(0.0).epsilon(1e-6));
}

namespace {

// Slow per-head attention with explicit causal masking, double softmax.
Tensor attention_oracle(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    const int t = q.dim(0), d = q.dim(1), hd = d / heads;
    Tensor out = Tensor::zeros({t, d});
    for (int h = 0; h < heads; ++h) {
        for (int r = 0; r < t; ++r) {
            std::vector<double> scores(static_cast<size_t>(r) + 1);
            for (int c = 0; c <= r; ++c) {
                double s = 0.0;
                for (int l = 0; l < hd; ++l)
                    s += static_cast<double>(q.at(r, h * hd + l)) * k.at(c, h * hd + l);
                scores[static_cast<size_t>(c)] = s / std::sqrt(static_cast<double>(hd));
            }
            const double mx = *std::max_element(scores.begin(), scores.end());
            double z = 0.0;
            for (double& s : scores) {
                s = std::exp(s - mx);
                z += s;
            }
            for (int c = 0; c <= r; ++c)
                for (int l = 0; l < hd; ++l)
                    out.at(r, h * hd + l) += static_cast<float>(
                        scores[static_cast<size_t>(c)] / z * v.at(c, h * hd + l));
        }
    }
    return out;
}

}  // namespace

TEST_CASE("causal attention matches the slow oracle and respects causality") {
    Rng rng(16);
    const int t = 5, d = 8, heads = 2;
    Tensor q = random_tensor({t, d}, rng);
    Tensor k = random_tensor({t, d}, rng);
    Tensor v = random_tensor({t, d}, rng);
    Tensor got = ops::causal_attention(q, k, v, heads, nullptr);
    Tensor want = attention_oracle(q, k, v, heads);
    for (int64_t i = 0; i < want.numel(); ++i)
        CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-5));

    // future rows cannot influence earlier outputs
    Tensor q2 = q, k2 = k, v2 = v;
    for (int c = 0; c < d; ++c) {
        q2.at(t - 1, c) += 3.0f;
        k2.at(t - 1, c) -= 2.0f;
        v2.at(t - 1, c) *= -1.0f;
    }
    Tensor got2 = ops::causal_attention(q2, k2, v2, heads, nullptr);
    for (int r = 0; r < t - 1; ++r)
        for (int c = 0; c < d; ++c) CHECK(got2.at(r, c) == got.at(r, c));

    CHECK_THROWS_AS(ops::causal_attention(q, k, v, 3, nullptr), ShapeError);
}

TEST_CASE("embedding gather copies the addressed rows") {
    Rng rng(17);
    Tensor table = random_tensor({6, 3}, rng);
    std::vector<int> ids = {4, 0, 4, 5};
    Tensor got = ops::embedding_gather(table, ids);
    REQUIRE(got.shape == std::vector<int>{4, 3});
    for (size_t r = 0; r < ids.size(); ++r)
        for (int c = 0; c < 3; ++c) CHECK(got.at(static_cast<int>(r), c) == table.at(ids[r], c));
    std::vector<int> bad = {6};
    CHECK_THROWS_AS(ops::embedding_gather(table, bad), ValueError);
}

TEST_CASE("last_row extracts the final row") {
    Tensor x({3, 2}, {1, 2, 3, 4, 5, 6});
    Tensor r = ops::last_row(x);
    REQUIRE(r.shape == std::vector<int>{2});
    CHECK(r.data[0] == 5.0f);
    CHECK(r.data[1] == 6.0f);
}

TEST_CASE("masked cross entropy equals hand-computed means") {
    // uniform logits: loss is log(V) regardless of target
    Tensor logits = Tensor::zeros({3, 5});
    std::vector<int> targets = {1, 2, 3};
    std::vector<uint8_t> mask = {0, 1, 1};
    Tensor loss = ops::masked_cross_entropy(logits, targets, mask, nullptr);
    CHECK(loss.data[0] == doctest::Approx(std::log(5.0)).epsilon(1e-6));

    // two masked rows: mean of the per-row terms, computed in double
    Rng rng(18);
    Tensor l2 = random_tensor({2, 4}, rng);
    std::vector<int> t2 = {3, 0};
    std::vector<uint8_t> m2 = {1, 0};
    double z = 0.0;
    double mx = -1e30;
    for (int c = 0; c < 4; ++c) mx = std::max(mx, static_cast<double>(l2.at(0, c)));
    for (int c = 0; c < 4; ++c) z += std::exp(l2.at(0, c) - mx);
    const double want = -(l2.at(0, 3) - mx - std::log(z));
    Tensor got = ops::masked_cross_entropy(l2, t2, m2, nullptr);
    CHECK(got.data[0] == doctest::Approx(want).epsilon(1e-5));

    std::vector<uint8_t> empty_mask = {0, 0};
    CHECK_THROWS_AS(ops::masked_cross_entropy(l2, t2, empty_mask, nullptr), ValueError);
}

TEST_CASE("dot and linear use the naive definitions") {
    Rng rng(19);
    Tensor a = random_tensor({12}, rng);
    Tensor b = random_tensor({12}, rng);
    double want = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        want += static_cast<double>(a.data[i]) * b.data[i];
    CHECK(ops::dot(a, b) == doctest::Approx(want).epsilon(1e-7));

    Tensor x = random_tensor({3, 4}, rng);
    Tensor w = random_tensor({4, 5}, rng);
    Tensor bias = random_tensor({5}, rng);
    Tensor lin = ops::linear(x, w, bias);
    Tensor ref = ops::add_bias(ops::matmul(x, w), bias);
    for (int64_t i = 0; i < ref.numel(); ++i)
        CHECK(lin.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-5));

    Tensor xv = random_tensor({4}, rng);
    Tensor lv = ops::linear(xv, w, bias);
    REQUIRE(lv.shape == std::vector<int>{5});
    for (int j = 0; j < 5; ++j) {
        double acc = bias.data[j];
        for (int i = 0; i < 4; ++i) acc += static_cast<double>(xv.data[i]) * w.at(i, j);
        CHECK(lv.data[j] == doctest::Approx(acc).epsilon(1e-5));
    }
}

TEST_CASE("tape forward values equal the kernels and replay verifies") {
    Rng rng(20);
    Tape tape;
    Tensor av = random_tensor({3, 4}, rng);
    Tensor bv = random_tensor({4, 2}, rng);
    ValueRef a = tape.leaf(av);
    ValueRef b = tape.leaf(bv);
    ValueRef mm = tape.matmul(a, b);
    ValueRef g = tape.gelu(mm);
    ValueRef sm = tape.softmax_lastdim(g);
    CHECK(tape.value(mm).data == ops::matmul(av, bv).data);
    CHECK(tape.value(sm).data == ops::softmax_lastdim(ops::gelu(ops::matmul(av, bv))).data);
    CHECK(tape.verify_replay());
    tape.reset();
    CHECK(tape.size() == 0);
}

TEST_CASE("backward rejects non-scalar outputs") {
    Tape tape;
    ValueRef a = tape.leaf(Tensor::zeros({2, 2}));
    std::vector<ValueRef> wanted = {a};
    CHECK_THROWS_AS(tape.backward(a, wanted), ValueError);
}


TEST_CASE("every op's gradient matches central finite differences") {
    for (const testutil::OpProbe& c : testutil::op_probes()) {
        for (uint64_t seed = 1; seed <= 3; ++seed) {
            const double err = c.fn(seed * 7919);
            INFO(std::string(c.name), " seed ", seed);
            CHECK(err < 1e-3);
        }
    }
}

TEST_CASE("gradients are independent of the wanted set and zero off-path") {
    Rng rng(21);
    Tape tape;
    ValueRef a = tape.leaf(random_tensor({3, 3}, rng));
    ValueRef b = tape.leaf(random_tensor({3, 3}, rng));
    ValueRef unused = tape.leaf(random_tensor({2, 2}, rng));
    ValueRef y = tape.mul(tape.add(a, b), b);
    ValueRef s = testutil::weighted_sum2d(tape, y, rng);

    std::vector<ValueRef> all = {a, b, unused};
    std::vector<ValueRef> only_a = {a};
    std::vector<Tensor> g_all = tape.backward(s, all);
    std::vector<Tensor> g_a = tape.backward(s, only_a);
    CHECK(g_all[0].data == g_a[0].data);
    for (float v : g_all[2].data) CHECK(v == 0.0f);
}

TEST_CASE("backward is deterministic") {
    auto run = [] {
        Rng rng(22);
        Tape tape;
        ValueRef a = tape.leaf(random_tensor({4, 4}, rng));
        ValueRef y = tape.gelu(tape.matmul(a, a));
        ValueRef s = testutil::weighted_sum2d(tape, y, rng);
        std::vector<ValueRef> want = {a};
        return tape.backward(s, want)[0];
    };
    Tensor g1 = run();
    Tensor g2 = run();
    CHECK(g1.data == g2.data);
}

TEST_CASE("rng primitives are reproducible and well-behaved") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng c(7);
    for (int i = 0; i < 1000; ++i) {
        const double u = c.next_double();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(c.next_below(10) < 10);
    }

    CHECK(mix_seed(1, 2) != mix_seed(2, 1));
    CHECK(mix_seed(0, 0) != 0);

    std::vector<int64_t> v(20);
    std::iota(v.begin(), v.end(), 0);
    std::vector<int64_t> w = v;
    Rng d(9);
    d.shuffle(w);
    std::vector<int64_t> sorted = w;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == v);  // permutation
    Rng e(9);
    std::vector<int64_t> w2 = v;
    e.shuffle(w2);
    CHECK(w == w2);  // seed-determined
}
