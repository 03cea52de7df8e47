// Times the OpenMP kernels against the serial reference implementations.

#include <chrono>
#include <cstdio>
#include <vector>

#include <omp.h>

#include "astromae/kernels.hpp"
#include "astromae/rng.hpp"

namespace {

using astromae::Rng;
using Clock = std::chrono::steady_clock;

std::vector<float> random_buffer(std::size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    return v;
}

template <typename Fn>
double time_best_of(int reps, Fn&& fn) {
    double best = 1e30;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = Clock::now();
        fn();
        best = std::min(best, std::chrono::duration<double>(Clock::now() - t0).count());
    }
    return best;
}

void report(const char* name, double serial, double parallel, double gflop) {
    std::printf("%-28s serial %8.3f ms (%6.2f GF/s)   parallel %8.3f ms (%6.2f GF/s)   speedup %.2fx\n",
                name, serial * 1e3, gflop / serial, parallel * 1e3, gflop / parallel,
                serial / parallel);
}

void bench_matmul(std::int64_t m, std::int64_t n, std::int64_t k, Rng& rng) {
    auto a = random_buffer(m * k, rng);
    auto b = random_buffer(k * n, rng);
    std::vector<float> c(m * n);
    const double gflop = 2.0 * m * n * k * 1e-9;
    const double ts = time_best_of(3, [&] {
        astromae::reference::matmul<float>(m, n, k, a.data(), b.data(), c.data());
    });
    const double tp = time_best_of(3, [&] {
        std::fill(c.begin(), c.end(), 0.0f);
        astromae::kernels::gemm_nn<float>(m, n, k, a.data(), b.data(), c.data());
    });
    char label[64];
    std::snprintf(label, sizeof(label), "matmul %lldx%lldx%lld", (long long)m, (long long)n,
                  (long long)k);
    report(label, ts, tp, gflop);
}

void bench_conv(std::int64_t batch, std::int64_t cin, std::int64_t cout, std::int64_t hw,
                std::int64_t kside, std::int64_t groups, Rng& rng) {
    astromae::kernels::Conv2dDims d{batch, cin, hw, hw, cout, kside, kside, 1, kside / 2, groups};
    auto x = random_buffer(batch * cin * hw * hw, rng);
    auto w = random_buffer(cout * (cin / groups) * kside * kside, rng);
    auto bias = random_buffer(cout, rng);
    std::vector<float> out(batch * cout * d.oh() * d.ow());
    const double gflop = 2.0 * batch * cout * d.oh() * d.ow() * (cin / groups) * kside * kside * 1e-9;
    const double ts = time_best_of(3, [&] {
        astromae::reference::conv2d<float>(d, x.data(), w.data(), bias.data(), out.data());
    });
    const double tp = time_best_of(3, [&] {
        astromae::kernels::conv2d_forward<float>(d, x.data(), w.data(), bias.data(), out.data());
    });
    char label[64];
    std::snprintf(label, sizeof(label), "conv %lldx%lld->%lld @%lld g%lld", (long long)batch,
                  (long long)cin, (long long)cout, (long long)hw, (long long)groups);
    report(label, ts, tp, gflop);
}

void bench_pool(std::int64_t batch, std::int64_t c, std::int64_t hw, Rng& rng) {
    astromae::kernels::Pool2dDims d{batch, c, hw, hw, 2, 2, 0};
    auto x = random_buffer(batch * c * hw * hw, rng);
    std::vector<float> out(batch * c * d.oh() * d.ow());
    std::vector<std::int64_t> argmax(out.size());
    const double gflop = 1.0 * batch * c * d.oh() * d.ow() * 4 * 1e-9;
    const double ts = time_best_of(3, [&] {
        astromae::reference::max_pool2d<float>(d, x.data(), out.data());
    });
    const double tp = time_best_of(3, [&] {
        astromae::kernels::max_pool2d_forward<float>(d, x.data(), out.data(), argmax.data());
    });
    char label[64];
    std::snprintf(label, sizeof(label), "max_pool %lldx%lld @%lld", (long long)batch, (long long)c,
                  (long long)hw);
    report(label, ts, tp, gflop);
}

}  // namespace

int main() {
    std::printf("threads: %d\n", omp_get_max_threads());
    Rng rng(7);
    bench_matmul(256, 256, 256, rng);
    bench_matmul(1088, 192, 320, rng);
    bench_matmul(64, 65536, 144, rng);
    bench_conv(16, 16, 32, 32, 3, 1, rng);
    bench_conv(16, 64, 64, 8, 3, 4, rng);
    bench_pool(64, 64, 32, rng);
    return 0;
}
