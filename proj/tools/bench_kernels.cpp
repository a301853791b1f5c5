// Times the OpenMP kernels against their serial reference twins.
// Usage: bench_kernels [--quick]

#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "namex/kernels.hpp"
#include "namex/prng.hpp"
#include "namex/stability_lab.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(int reps, const auto& fn) {
    fn();  // warm up
    const auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = Clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char* name, size_t n, double serial_ms, double parallel_ms) {
    std::printf("%-18s n=%-9zu serial %9.3f ms   parallel %9.3f ms   speedup %.2fx\n", name, n,
                serial_ms, parallel_ms, serial_ms / parallel_ms);
}

}  // namespace

int main(int argc, char** argv) {
    bool quick = false;
    for (int i = 1; i < argc; ++i)
        if (std::strcmp(argv[i], "--quick") == 0) quick = true;

    const size_t d = quick ? (1u << 16) : (1u << 22);
    const size_t n_experts = 8;
    const int reps = quick ? 3 : 10;

    std::printf("threads: %d\n", namex::kernels::max_threads());

    namex::Xoshiro256pp rng(42);
    std::vector<double> a(d), b(d), out(d);
    for (size_t i = 0; i < d; ++i) {
        a[i] = rng.normal();
        b[i] = rng.normal();
    }

    volatile double sink = 0.0;
    report("dot", d, time_ms(reps, [&] { sink = namex::kernels::serial::dot(a, b); }),
           time_ms(reps, [&] { sink = namex::kernels::dot(a, b); }));

    report("axpy", d, time_ms(reps, [&] { namex::kernels::serial::axpy(0.5, a, out); }),
           time_ms(reps, [&] { namex::kernels::axpy(0.5, a, out); }));

    const size_t gram_d = quick ? (1u << 14) : (1u << 19);
    std::vector<double> cols(gram_d * n_experts);
    for (auto& v : cols) v = rng.normal();
    std::vector<double> k(n_experts * n_experts);
    report("gram (N=8)", gram_d,
           time_ms(reps, [&] { namex::kernels::serial::gram(cols.data(), gram_d, n_experts, k.data()); }),
           time_ms(reps, [&] { namex::kernels::gram(cols.data(), gram_d, n_experts, k.data()); }));

    std::vector<double> re(d, 0.0), im(d, 0.0), disp(d);
    report("complex_step", d,
           time_ms(reps, [&] {
               namex::kernels::serial::complex_step(re, im, a, 0.87, 0.23, 0.1, disp);
           }),
           time_ms(reps, [&] { namex::kernels::complex_step(re, im, a, 0.87, 0.23, 0.1, disp); }));

    const int grid = quick ? 101 : 401;
    const auto sweep_serial = [&] {
        double worst = 0.0;
        for (int i = 0; i < grid; ++i)
            for (int j = 0; j < grid; ++j) {
                const double r = -1.0 + 2.0 * i / (grid - 1);
                const double u = -1.0 + 2.0 * j / (grid - 1);
                worst = std::max(worst,
                                 namex::spectral_radius(namex::reduced_matrix({r, u, 2.0, 0.5}))
                                     .spectral_radius);
            }
        sink = worst;
    };
    const auto sweep_parallel = [&] { sink = namex::sweep(grid, 2.0, 0.5).back().rho; };
    report("stability sweep", size_t(grid) * size_t(grid), time_ms(reps, sweep_serial),
           time_ms(reps, sweep_parallel));

    (void)sink;
    return 0;
}
