// Timing comparison of the OpenMP kernels against their serial reference
// implementations (the ones the tests check bit-for-bit equivalence against).
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "gritvq/codebook.hpp"
#include "gritvq/numerics.hpp"

using namespace gritvq;
using Clock = std::chrono::steady_clock;

namespace {

double sink = 0.0;

template <typename F>
double time_best_of(int reps, F&& body) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = Clock::now();
        body();
        const auto t1 = Clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

void bench_matmul(long n) {
    Rng rng(17);
    Mat a = random_normal(rng, n, n);
    Mat b = random_normal(rng, n, n);
    const double ts = time_best_of(3, [&] {
        Mat c = matmul_serial(a, b);
        sink += c.data[0];
    });
    const double tp = time_best_of(3, [&] {
        Mat c = matmul(a, b);
        sink += c.data[0];
    });
    std::printf("%-10s %6ldx%-6ld %10.3f %10.3f %8.2fx\n", "matmul", n, n, ts * 1e3, tp * 1e3,
                ts / tp);
}

void bench_batch_nn(long n, long K, long d) {
    Rng rng(29);
    CodebookState cb = init_codebook(K, d, rng);
    TransformSpec tf;
    TransformedCache cache = refresh_cache(cb, tf, 0);
    Mat z = random_normal(rng, n, d, 2.0);
    const double ts = time_best_of(3, [&] {
        auto asg = batch_nn_serial(cache, z);
        sink += asg[0].gap;
    });
    const double tp = time_best_of(3, [&] {
        auto asg = batch_nn(cache, z);
        sink += asg[0].gap;
    });
    std::printf("%-10s n=%-5ld K=%-5ld d=%-3ld %6.3f %10.3f %8.2fx\n", "batch_nn", n, K, d,
                ts * 1e3, tp * 1e3, ts / tp);
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
    std::printf("openmp: disabled (both columns run the serial path)\n");
#endif
    std::printf("%-10s %-13s %10s %10s %9s\n", "kernel", "size", "serial ms", "parallel",
                "speedup");
    for (long n : {128L, 256L, 512L}) bench_matmul(n);
    for (long n : {4096L, 16384L}) bench_batch_nn(n, 1024, 32);
    bench_batch_nn(16384, 4096, 32);
    if (sink == 12345.6789) std::printf("#\n");  // keep the work observable
    return 0;
}
