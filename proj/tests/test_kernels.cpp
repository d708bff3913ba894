// The OpenMP kernels must match the serial reference bit for bit, at any
// thread count. Simple kernels are also checked against independent oracles.
#include <cmath>
#include <cstring>
#include <omp.h>
#include <random>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "wid/kernels.hpp"

using namespace wid;
using widtest::test_rng;

namespace {

std::vector<float> rand_vec(size_t n, uint64_t seed, float scale = 1.0f) {
    std::vector<float> v(n);
    auto rng = test_rng(seed);
    std::normal_distribution<float> nd(0.0f, scale);
    for (float& x : v) x = nd(rng);
    return v;
}

bool bits_equal(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

// runs fn at several thread counts and requires identical output each time
template <typename Fn>
std::vector<float> threads_invariant(size_t out_size, Fn fn) {
    int saved = omp_get_max_threads();
    std::vector<float> first;
    for (int t : {1, 2, 5}) {
        omp_set_num_threads(t);
        std::vector<float> out(out_size, 0.0f);
        fn(out.data());
        if (first.empty())
            first = out;
        else
            CHECK(bits_equal(first, out));
    }
    omp_set_num_threads(saved);
    return first;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("matmul variants match the serial reference at every thread count") {
    struct Shape { int m, k, n; };
    for (auto [m, k, n] : {Shape{1, 1, 1}, Shape{3, 5, 7}, Shape{16, 16, 16}, Shape{33, 17, 9},
                           Shape{8, 64, 130}}) {
        for (bool acc : {false, true}) {
            auto a = rand_vec(static_cast<size_t>(m) * k, 100 + m);
            auto b = rand_vec(static_cast<size_t>(k) * n, 200 + n);
            auto init = rand_vec(static_cast<size_t>(m) * n, 300 + m + n);

            std::vector<float> want = init;
            if (!acc) std::fill(want.begin(), want.end(), 0.0f);
            kern::ref::matmul_nn(a.data(), b.data(), want.data(), m, k, n, acc);
            auto got = threads_invariant(want.size(), [&](float* out) {
                if (acc) std::copy(init.begin(), init.end(), out);
                kern::matmul_nn(a.data(), b.data(), out, m, k, n, acc);
            });
            CHECK(bits_equal(want, got));

            auto bt = rand_vec(static_cast<size_t>(n) * k, 400 + n);
            want = init;
            if (!acc) std::fill(want.begin(), want.end(), 0.0f);
            kern::ref::matmul_nt(a.data(), bt.data(), want.data(), m, k, n, acc);
            got = threads_invariant(want.size(), [&](float* out) {
                if (acc) std::copy(init.begin(), init.end(), out);
                kern::matmul_nt(a.data(), bt.data(), out, m, k, n, acc);
            });
            CHECK(bits_equal(want, got));

            auto at = rand_vec(static_cast<size_t>(k) * m, 500 + k);
            want = init;
            if (!acc) std::fill(want.begin(), want.end(), 0.0f);
            kern::ref::matmul_tn(at.data(), b.data(), want.data(), k, m, n, acc);
            got = threads_invariant(want.size(), [&](float* out) {
                if (acc) std::copy(init.begin(), init.end(), out);
                kern::matmul_tn(at.data(), b.data(), out, k, m, n, acc);
            });
            CHECK(bits_equal(want, got));
        }
    }
}

TEST_CASE("matmul_nn against a plain double-precision oracle") {
    int m = 7, k = 13, n = 5;
    auto a = rand_vec(static_cast<size_t>(m) * k, 1);
    auto b = rand_vec(static_cast<size_t>(k) * n, 2);
    std::vector<float> c(static_cast<size_t>(m) * n);
    kern::matmul_nn(a.data(), b.data(), c.data(), m, k, n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double want = 0.0;
            for (int kk = 0; kk < k; ++kk)
                want += static_cast<double>(a[static_cast<size_t>(i) * k + kk]) *
                        b[static_cast<size_t>(kk) * n + j];
            CHECK(c[static_cast<size_t>(i) * n + j] ==
                  doctest::Approx(want).epsilon(1e-5));
        }
}

TEST_CASE("gelu matches the tanh approximation recomputed in double") {
    auto x = rand_vec(101, 7, 2.0f);
    std::vector<float> y(x.size());
    kern::gelu_forward(x.data(), y.data(), static_cast<int64_t>(x.size()));
    for (size_t i = 0; i < x.size(); ++i) {
        double xi = x[i];
        double inner = std::sqrt(2.0 / M_PI) * (xi + 0.044715 * xi * xi * xi);
        double want = 0.5 * xi * (1.0 + std::tanh(inner));
        CHECK(y[i] == doctest::Approx(want).epsilon(2e-5));
    }
    std::vector<float> yr(x.size());
    kern::ref::gelu_forward(x.data(), yr.data(), static_cast<int64_t>(x.size()));
    CHECK(bits_equal(y, yr));
}

TEST_CASE("gelu backward equals a central finite difference") {
    auto x = rand_vec(64, 8, 1.5f);
    std::vector<float> dy(x.size(), 1.0f);
    std::vector<float> dx(x.size());
    kern::gelu_backward(x.data(), dy.data(), dx.data(), static_cast<int64_t>(x.size()));
    for (size_t i = 0; i < x.size(); i += 7) {
        double h = 1e-3;
        float xs[2] = {static_cast<float>(x[i] - h), static_cast<float>(x[i] + h)};
        float ys[2];
        kern::gelu_forward(xs, ys, 2);
        double num = (static_cast<double>(ys[1]) - ys[0]) / (2 * h);
        CHECK(dx[i] == doctest::Approx(num).epsilon(2e-3));
    }
}

TEST_CASE("layer norm forward/backward match the reference bitwise") {
    int m = 9, n = 24;
    auto x = rand_vec(static_cast<size_t>(m) * n, 11);
    auto gamma = rand_vec(n, 12);
    auto beta = rand_vec(n, 13);
    std::vector<float> mean(m), rstd(m), meanr(m), rstdr(m);
    std::vector<float> want(x.size());
    kern::ref::layer_norm_forward(x.data(), gamma.data(), beta.data(), 1e-5f, want.data(),
                                  meanr.data(), rstdr.data(), m, n);
    auto got = threads_invariant(x.size(), [&](float* out) {
        kern::layer_norm_forward(x.data(), gamma.data(), beta.data(), 1e-5f, out, mean.data(),
                                 rstd.data(), m, n);
    });
    CHECK(bits_equal(want, got));
    CHECK(bits_equal(mean, meanr));
    CHECK(bits_equal(rstd, rstdr));

    // each normalized row has mean 0 and unit variance before gamma/beta
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j)
            s += (want[static_cast<size_t>(i) * n + j] - beta[static_cast<size_t>(j)]) /
                 gamma[static_cast<size_t>(j)];
        CHECK(std::abs(s / n) < 1e-5);
    }

    auto dy = rand_vec(x.size(), 14);
    std::vector<float> dxr(x.size()), dgr(n, 0.0f), dbr(n, 0.0f);
    kern::ref::layer_norm_backward(x.data(), gamma.data(), meanr.data(), rstdr.data(), dy.data(),
                                   dxr.data(), dgr.data(), dbr.data(), m, n);
    std::vector<float> dg(n, 0.0f), db(n, 0.0f);
    auto dx = threads_invariant(x.size(), [&](float* out) {
        std::fill(dg.begin(), dg.end(), 0.0f);
        std::fill(db.begin(), db.end(), 0.0f);
        kern::layer_norm_backward(x.data(), gamma.data(), meanr.data(), rstdr.data(), dy.data(),
                                  out, dg.data(), db.data(), m, n);
    });
    CHECK(bits_equal(dxr, dx));
    CHECK(bits_equal(dgr, dg));
    CHECK(bits_equal(dbr, db));
}

TEST_CASE("softmax rows: reference match, normalization, max location") {
    int m = 6, n = 17;
    auto x = rand_vec(static_cast<size_t>(m) * n, 15, 3.0f);
    std::vector<float> want(x.size());
    kern::ref::softmax_rows_forward(x.data(), want.data(), m, n);
    auto got = threads_invariant(x.size(),
                                 [&](float* out) { kern::softmax_rows_forward(x.data(), out, m, n); });
    CHECK(bits_equal(want, got));
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        int argmax_x = 0, argmax_p = 0;
        for (int j = 0; j < n; ++j) {
            size_t ij = static_cast<size_t>(i) * n + j;
            s += want[ij];
            if (x[ij] > x[static_cast<size_t>(i) * n + argmax_x]) argmax_x = j;
            if (want[ij] > want[static_cast<size_t>(i) * n + argmax_p]) argmax_p = j;
            CHECK(want[ij] > 0.0f);
        }
        CHECK(std::abs(s - 1.0) < 1e-5);
        CHECK(argmax_x == argmax_p);
    }
}

TEST_CASE("attention matches the reference and respects causality") {
    int b = 2, n = 11, heads = 3, dk = 5;
    size_t inner = static_cast<size_t>(b) * n * heads * dk;
    auto q = rand_vec(inner, 21);
    auto k = rand_vec(inner, 22);
    auto v = rand_vec(inner, 23);
    float scale = 1.0f / std::sqrt(static_cast<float>(dk));
    for (bool causal : {false, true}) {
        std::vector<float> probs_r(static_cast<size_t>(b) * heads * n * n);
        std::vector<float> out_r(inner);
        kern::ref::attention_forward(q.data(), k.data(), v.data(), probs_r.data(), out_r.data(),
                                     b, n, heads, dk, scale, causal);
        std::vector<float> probs(probs_r.size());
        auto out = threads_invariant(inner, [&](float* o) {
            kern::attention_forward(q.data(), k.data(), v.data(), probs.data(), o, b, n, heads,
                                    dk, scale, causal);
        });
        CHECK(bits_equal(out_r, out));
        CHECK(bits_equal(probs_r, probs));
        if (causal) {
            for (int e = 0; e < b * heads; ++e)
                for (int i = 0; i < n; ++i)
                    for (int j = i + 1; j < n; ++j)
                        CHECK(probs[static_cast<size_t>(e) * n * n +
                                    static_cast<size_t>(i) * n + j] == 0.0f);
        }
        // rows are normalized either way
        for (int e = 0; e < b * heads; ++e)
            for (int i = 0; i < n; ++i) {
                double s = 0.0;
                for (int j = 0; j < n; ++j)
                    s += probs[static_cast<size_t>(e) * n * n + static_cast<size_t>(i) * n + j];
                CHECK(std::abs(s - 1.0) < 1e-5);
            }

        auto dout = rand_vec(inner, 24);
        std::vector<float> dq_r(inner, 0.0f), dk_r(inner, 0.0f), dv_r(inner, 0.0f);
        kern::ref::attention_backward(q.data(), k.data(), v.data(), probs_r.data(), dout.data(),
                                      dq_r.data(), dk_r.data(), dv_r.data(), b, n, heads, dk,
                                      scale, causal);
        std::vector<float> dkk(inner, 0.0f), dv(inner, 0.0f);
        auto dq = threads_invariant(inner, [&](float* o) {
            std::fill(dkk.begin(), dkk.end(), 0.0f);
            std::fill(dv.begin(), dv.end(), 0.0f);
            kern::attention_backward(q.data(), k.data(), v.data(), probs_r.data(), dout.data(), o,
                                     dkk.data(), dv.data(), b, n, heads, dk, scale, causal);
        });
        CHECK(bits_equal(dq_r, dq));
        CHECK(bits_equal(dk_r, dkk));
        CHECK(bits_equal(dv_r, dv));
    }
}

TEST_CASE("embedding gather/scatter") {
    int rows = 13, dim = 6, count = 9;
    auto table = rand_vec(static_cast<size_t>(rows) * dim, 31);
    std::vector<int32_t> ids = {0, 5, 12, 5, 3, 0, 7, 12, 1};
    std::vector<float> out(static_cast<size_t>(count) * dim);
    kern::embedding_gather(table.data(), ids.data(), out.data(), count, dim);
    for (int i = 0; i < count; ++i)
        for (int d = 0; d < dim; ++d)
            CHECK(out[static_cast<size_t>(i) * dim + d] ==
                  table[static_cast<size_t>(ids[static_cast<size_t>(i)]) * dim + d]);

    auto dout = rand_vec(out.size(), 32);
    std::vector<float> grad_want(table.size(), 0.0f);
    for (int i = 0; i < count; ++i)
        for (int d = 0; d < dim; ++d)
            grad_want[static_cast<size_t>(ids[static_cast<size_t>(i)]) * dim + d] +=
                dout[static_cast<size_t>(i) * dim + d];
    auto grad = threads_invariant(table.size(), [&](float* g) {
        kern::embedding_scatter_acc(dout.data(), ids.data(), g, count, rows, dim);
    });
    for (size_t i = 0; i < grad.size(); ++i)
        CHECK(grad[i] == doctest::Approx(grad_want[i]).epsilon(1e-6));
}

TEST_CASE("adamw matches a scalar double recurrence") {
    int64_t n = 5;
    std::vector<float> p = {1.0f, -2.0f, 0.5f, 3.0f, -0.25f};
    std::vector<float> g = {0.1f, -0.2f, 0.3f, 0.0f, -0.7f};
    std::vector<float> m(n, 0.0f), v(n, 0.0f);
    std::vector<float> p0 = p;
    float lr = 0.01f, b1 = 0.9f, b2 = 0.99f, eps = 1e-8f, wd = 0.01f;

    std::vector<float> pr = p, mr(n, 0.0f), vr(n, 0.0f);
    kern::adamw_update(p.data(), g.data(), m.data(), v.data(), n, lr, b1, b2, eps, wd, 1);
    kern::ref::adamw_update(pr.data(), g.data(), mr.data(), vr.data(), n, lr, b1, b2, eps, wd, 1);
    CHECK(bits_equal(p, pr));
    CHECK(bits_equal(m, mr));
    CHECK(bits_equal(v, vr));

    for (int64_t i = 0; i < n; ++i) {
        double mi = (1.0 - b1) * g[static_cast<size_t>(i)];
        double vi = (1.0 - b2) * static_cast<double>(g[static_cast<size_t>(i)]) *
                    g[static_cast<size_t>(i)];
        double mhat = mi / (1.0 - b1);
        double vhat = vi / (1.0 - b2);
        double want = p0[static_cast<size_t>(i)] -
                      lr * (mhat / (std::sqrt(vhat) + eps) + wd * p0[static_cast<size_t>(i)]);
        CHECK(p[static_cast<size_t>(i)] == doctest::Approx(want).epsilon(1e-6));
    }
}

TEST_CASE("small utility kernels") {
    auto a = rand_vec(40, 41);
    auto b = rand_vec(40, 42);
    std::vector<float> y = a;
    kern::add_inplace(y.data(), b.data(), 40);
    for (int i = 0; i < 40; ++i) CHECK(y[static_cast<size_t>(i)] ==
                                       a[static_cast<size_t>(i)] + b[static_cast<size_t>(i)]);

    std::vector<float> dst(40, 0.0f);
    kern::copy(dst.data(), a.data(), 40);
    CHECK(bits_equal(dst, a));

    int m = 5, n = 8;
    std::vector<float> at(static_cast<size_t>(m) * n);
    kern::transpose(a.data(), at.data(), m, n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            CHECK(at[static_cast<size_t>(j) * m + i] == a[static_cast<size_t>(i) * n + j]);

    std::vector<float> rows = a;  // 5 x 8
    kern::add_bias_rows(rows.data(), b.data(), m, n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            CHECK(rows[static_cast<size_t>(i) * n + j] ==
                  a[static_cast<size_t>(i) * n + j] + b[static_cast<size_t>(j)]);

    std::vector<float> db(n, 1.0f);
    kern::col_sum_acc(a.data(), db.data(), m, n);
    for (int j = 0; j < n; ++j) {
        double want = 1.0;
        for (int i = 0; i < m; ++i) want += a[static_cast<size_t>(i) * n + j];
        CHECK(db[static_cast<size_t>(j)] == doctest::Approx(want).epsilon(1e-6));
    }
}

}  // TEST_SUITE
