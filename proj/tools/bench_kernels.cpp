// Timing comparison between the serial reference kernels and the OpenMP
// variants across problem sizes. Median of repeated runs, one table row per
// size.

#include "mfdmeta/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <random>
#include <vector>

using namespace mfd;
using clk = std::chrono::steady_clock;

namespace {

double median_time(int reps, const std::function<void()>& fn) {
    std::vector<double> times;
    fn(); // warmup
    for (int i = 0; i < reps; ++i) {
        auto t0 = clk::now();
        fn();
        times.push_back(std::chrono::duration<double, std::micro>(clk::now() - t0).count());
    }
    std::sort(times.begin(), times.end());
    return times[times.size() / 2];
}

std::vector<double> random_vec(size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

} // namespace

int main() {
    std::mt19937_64 rng(42);
    std::printf("threads: %d\n\n", omp_get_max_threads());

    std::printf("matmul (square, us, median of 9)\n%8s %12s %12s %8s\n", "n", "serial", "openmp",
                "speedup");
    for (int n : {16, 32, 64, 128, 256, 512}) {
        auto a = random_vec(static_cast<size_t>(n) * n, rng);
        auto b = random_vec(static_cast<size_t>(n) * n, rng);
        std::vector<double> out(static_cast<size_t>(n) * n);
        const double ts = median_time(9, [&] {
            kernels::serial::matmul(a.data(), b.data(), out.data(), n, n, n);
        });
        const double tp = median_time(9, [&] {
            kernels::parallel::matmul(a.data(), b.data(), out.data(), n, n, n);
        });
        std::printf("%8d %12.1f %12.1f %8.2f\n", n, ts, tp, ts / tp);
    }

    std::printf("\nelementwise multiply (us, median of 9)\n%8s %12s %12s %8s\n", "n", "serial",
                "openmp", "speedup");
    for (int n : {1 << 10, 1 << 14, 1 << 18, 1 << 22}) {
        auto a = random_vec(static_cast<size_t>(n), rng);
        auto b = random_vec(static_cast<size_t>(n), rng);
        std::vector<double> out(static_cast<size_t>(n));
        const double ts = median_time(9, [&] {
            kernels::serial::ewise(kernels::Binary::Mul, a.data(), b.data(), out.data(), n);
        });
        const double tp = median_time(9, [&] {
            kernels::parallel::ewise(kernels::Binary::Mul, a.data(), b.data(), out.data(), n);
        });
        std::printf("%8d %12.1f %12.1f %8.2f\n", n, ts, tp, ts / tp);
    }

    std::printf("\nunary exp (us, median of 9)\n%8s %12s %12s %8s\n", "n", "serial", "openmp",
                "speedup");
    for (int n : {1 << 10, 1 << 14, 1 << 18, 1 << 22}) {
        auto a = random_vec(static_cast<size_t>(n), rng);
        std::vector<double> out(static_cast<size_t>(n));
        const double ts = median_time(9, [&] {
            kernels::serial::unary(kernels::Unary::Exp, a.data(), out.data(), n);
        });
        const double tp = median_time(9, [&] {
            kernels::parallel::unary(kernels::Unary::Exp, a.data(), out.data(), n);
        });
        std::printf("%8d %12.1f %12.1f %8.2f\n", n, ts, tp, ts / tp);
    }
    return 0;
}
