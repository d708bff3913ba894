// Times the OpenMP kernels against their serial reference twins. Run with
// WID_THREADS or OMP_NUM_THREADS to pick the parallel width.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <omp.h>
#include <string>
#include <vector>

#include "wid/kernels.hpp"
#include "wid/rng.hpp"

using namespace wid;

namespace {

std::vector<float> random_vec(size_t n, uint64_t salt) {
    std::vector<float> v(n);
    auto rng = make_rng(42, RngStream::Init, salt);
    for (float& x : v) x = truncated_normal(rng, 1.0f);
    return v;
}

double time_of(const std::function<void()>& fn, int iters) {
    fn();  // warm up
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < iters; ++i) fn();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count() / iters;
}

void row(const char* name, double flops, double serial_s, double omp_s) {
    std::printf("%-22s %10.3f ms %10.3f ms %8.2fx %9.2f GF/s\n", name, serial_s * 1e3, omp_s * 1e3,
                serial_s / omp_s, flops / omp_s * 1e-9);
}

}  // namespace

int main(int argc, char** argv) {
    int m = 512, k = 512, n = 512;
    if (argc == 4) {
        m = std::atoi(argv[1]);
        k = std::atoi(argv[2]);
        n = std::atoi(argv[3]);
    }
    const char* env = std::getenv("WID_THREADS");
    if (env && *env) omp_set_num_threads(std::atoi(env));
    std::printf("matmul %dx%dx%d, %d OpenMP thread(s)\n\n", m, k, n, omp_get_max_threads());
    std::printf("%-22s %13s %13s %9s %12s\n", "kernel", "serial", "openmp", "speedup", "rate");

    std::vector<float> a = random_vec(static_cast<size_t>(m) * k, 1);
    std::vector<float> b = random_vec(static_cast<size_t>(k) * n, 2);
    std::vector<float> c(static_cast<size_t>(m) * n);
    double mm_flops = 2.0 * m * k * n;
    int iters = m >= 512 ? 3 : 10;

    row("matmul_nn", mm_flops,
        time_of([&] { kern::ref::matmul_nn(a.data(), b.data(), c.data(), m, k, n); }, iters),
        time_of([&] { kern::matmul_nn(a.data(), b.data(), c.data(), m, k, n); }, iters));

    std::vector<float> bt = random_vec(static_cast<size_t>(n) * k, 3);
    row("matmul_nt", mm_flops,
        time_of([&] { kern::ref::matmul_nt(a.data(), bt.data(), c.data(), m, k, n); }, iters),
        time_of([&] { kern::matmul_nt(a.data(), bt.data(), c.data(), m, k, n); }, iters));

    std::vector<float> at = random_vec(static_cast<size_t>(k) * m, 4);
    row("matmul_tn", mm_flops,
        time_of([&] { kern::ref::matmul_tn(at.data(), b.data(), c.data(), k, m, n); }, iters),
        time_of([&] { kern::matmul_tn(at.data(), b.data(), c.data(), k, m, n); }, iters));

    // attention at a transformer-ish shape
    int bsz = 8, heads = 8, seq = 128, dk = 64;
    size_t inner = static_cast<size_t>(bsz) * seq * heads * dk;
    std::vector<float> q = random_vec(inner, 5), kk = random_vec(inner, 6),
                       v = random_vec(inner, 7);
    std::vector<float> probs(static_cast<size_t>(bsz) * heads * seq * seq);
    std::vector<float> out(inner);
    double att_flops = 4.0 * bsz * heads * static_cast<double>(seq) * seq * dk;
    row("attention_forward", att_flops,
        time_of(
            [&] {
                kern::ref::attention_forward(q.data(), kk.data(), v.data(), probs.data(),
                                             out.data(), bsz, seq, heads, dk, 0.125f, false);
            },
            iters),
        time_of(
            [&] {
                kern::attention_forward(q.data(), kk.data(), v.data(), probs.data(), out.data(),
                                        bsz, seq, heads, dk, 0.125f, false);
            },
            iters));

    std::vector<float> ln_in = random_vec(static_cast<size_t>(m) * k, 8);
    std::vector<float> ln_out(ln_in.size()), mean(static_cast<size_t>(m)),
        rstd(static_cast<size_t>(m));
    std::vector<float> gamma = random_vec(static_cast<size_t>(k), 9),
                       beta = random_vec(static_cast<size_t>(k), 10);
    double ln_flops = 8.0 * m * k;
    row("layer_norm_forward", ln_flops,
        time_of(
            [&] {
                kern::ref::layer_norm_forward(ln_in.data(), gamma.data(), beta.data(), 1e-5f,
                                              ln_out.data(), mean.data(), rstd.data(), m, k);
            },
            iters * 10),
        time_of(
            [&] {
                kern::layer_norm_forward(ln_in.data(), gamma.data(), beta.data(), 1e-5f,
                                         ln_out.data(), mean.data(), rstd.data(), m, k);
            },
            iters * 10));

    std::vector<float> sm(static_cast<size_t>(m) * k);
    row("softmax_rows_forward", 5.0 * m * k,
        time_of([&] { kern::ref::softmax_rows_forward(ln_in.data(), sm.data(), m, k); },
                iters * 10),
        time_of([&] { kern::softmax_rows_forward(ln_in.data(), sm.data(), m, k); }, iters * 10));
    return 0;
}
