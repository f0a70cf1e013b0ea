// Compares the serial reference kernels against the OpenMP variants on the
// layer shapes the network actually runs, and cross-checks that both produce
// bit-identical results.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <omp.h>

#include "deepnoc/kernels.hpp"
#include "deepnoc/rng.hpp"

using deepnoc::Rng;
namespace kernels = deepnoc::kernels;

namespace {

using Clock = std::chrono::steady_clock;

std::vector<float> random_vec(std::size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (float& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    return v;
}

template <class F>
double time_ms(F&& fn, int reps) {
    fn(); // warm up
    const auto start = Clock::now();
    for (int r = 0; r < reps; ++r) fn();
    const auto stop = Clock::now();
    return std::chrono::duration<double, std::milli>(stop - start).count() / reps;
}

struct Shape {
    const char* name;
    int n, in, out;
};

} // namespace

int main(int argc, char** argv) {
    int reps = 50;
    if (argc > 1) reps = std::atoi(argv[1]);

    // Row counts reflect typical active peaks (peak stage) and loci (locus
    // stage); a large case shows scaling headroom.
    const Shape shapes[] = {
        {"peak_encoder.0", 250, 89, 128},
        {"peak_encoder.1", 250, 128, 128},
        {"peak_merge", 250, 150, 128},
        {"locus_encoder.0", 24, 256, 256},
        {"trunk.0", 1, 256, 256},
        {"large", 2000, 128, 128},
    };

    std::printf("threads: %d, reps: %d\n", omp_get_max_threads(), reps);
    std::printf("%-16s %-12s %10s %10s %8s %8s\n", "shape", "kernel", "serial_ms", "omp_ms",
                "speedup", "match");

    Rng rng(1);
    for (const Shape& s : shapes) {
        const auto x = random_vec(static_cast<std::size_t>(s.n) * s.in, rng);
        const auto w = random_vec(static_cast<std::size_t>(s.in) * s.out, rng);
        const auto b = random_vec(static_cast<std::size_t>(s.out), rng);
        const auto dy = random_vec(static_cast<std::size_t>(s.n) * s.out, rng);

        std::vector<float> y1(static_cast<std::size_t>(s.n) * s.out), y2 = y1;
        const double fwd_serial = time_ms(
            [&] { kernels::matmul_bias_serial(x.data(), s.n, s.in, w.data(), b.data(), y1.data(), s.out); },
            reps);
        const double fwd_omp = time_ms(
            [&] { kernels::matmul_bias_omp(x.data(), s.n, s.in, w.data(), b.data(), y2.data(), s.out); },
            reps);
        std::printf("%-16s %-12s %10.3f %10.3f %7.2fx %8s\n", s.name, "forward", fwd_serial,
                    fwd_omp, fwd_serial / fwd_omp, y1 == y2 ? "exact" : "DIFFER");

        std::vector<float> dx1(static_cast<std::size_t>(s.n) * s.in, 0.0f), dx2 = dx1;
        const double bwd_serial = time_ms(
            [&] { kernels::matmul_nt_serial(dy.data(), s.n, s.out, w.data(), dx1.data(), s.in); },
            reps);
        const double bwd_omp = time_ms(
            [&] { kernels::matmul_nt_omp(dy.data(), s.n, s.out, w.data(), dx2.data(), s.in); },
            reps);
        std::printf("%-16s %-12s %10.3f %10.3f %7.2fx %8s\n", s.name, "backward_dx", bwd_serial,
                    bwd_omp, bwd_serial / bwd_omp, dx1 == dx2 ? "exact" : "DIFFER");

        std::vector<float> dw1(static_cast<std::size_t>(s.in) * s.out, 0.0f), dw2 = dw1;
        std::vector<float> db1(static_cast<std::size_t>(s.out), 0.0f), db2 = db1;
        const double grad_serial = time_ms(
            [&] {
                std::memset(dw1.data(), 0, dw1.size() * sizeof(float));
                std::memset(db1.data(), 0, db1.size() * sizeof(float));
                kernels::accum_grad_serial(x.data(), dy.data(), s.n, s.in, s.out, dw1.data(),
                                           db1.data());
            },
            reps);
        const double grad_omp = time_ms(
            [&] {
                std::memset(dw2.data(), 0, dw2.size() * sizeof(float));
                std::memset(db2.data(), 0, db2.size() * sizeof(float));
                kernels::accum_grad_omp(x.data(), dy.data(), s.n, s.in, s.out, dw2.data(),
                                        db2.data());
            },
            reps);
        std::printf("%-16s %-12s %10.3f %10.3f %7.2fx %8s\n", s.name, "backward_dw", grad_serial,
                    grad_omp, grad_serial / grad_omp, dw1 == dw2 && db1 == db2 ? "exact" : "DIFFER");
    }
    return 0;
}
