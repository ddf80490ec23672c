// Serial vs OpenMP timings for the numeric kernels.
//
//   logicl_bench [--size N] [--dim D] [--reps R]

#include <omp.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "logicl/kernels.hpp"

using logicl::Matrix;
namespace k = logicl::kernels;

namespace {

Matrix random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(r, c);
    for (auto& v : m.data()) v = n(rng);
    return m;
}

// best of `reps`, in milliseconds
double time_ms(int reps, const std::function<void()>& f) {
    double best = 1e300;
    for (int i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Kernel benchmark"};
    std::size_t n = 1024, d = 256;
    int reps = 5;
    app.add_option("--size", n, "rows per operand");
    app.add_option("--dim", d, "row dimension");
    app.add_option("--reps", reps, "repetitions (best is reported)");
    CLI11_PARSE(app, argc, argv);

    std::mt19937_64 rng(42);
    const Matrix a = random_matrix(rng, n, d), b = random_matrix(rng, n, d), w = random_matrix(rng, d, d);
    const Matrix g = random_matrix(rng, n, d);
    std::vector<double> out(n);

    struct Row {
        const char* name;
        std::function<bool(k::Exec)> run;
    };
    const std::vector<Row> rows = {
        {"dot_scan", [&](k::Exec e) { k::dot_scan(a.row(0), b, out, e); return true; }},
        {"cross_gram", [&](k::Exec e) { return k::cross_gram(a, b, e).rows() == n; }},
        {"gaussian_kernel", [&](k::Exec e) { return k::gaussian_kernel(a, b, 4.0, e).rows() == n; }},
        {"project_rows", [&](k::Exec e) { return k::project_rows(w, a, e).rows() == n; }},
        {"accumulate_outer", [&](k::Exec e) { return k::accumulate_outer(g, a, e).rows() == d; }},
    };

    std::printf("threads=%d size=%zu dim=%zu reps=%d\n", omp_get_max_threads(), n, d, reps);
    std::printf("%-18s %12s %12s %8s\n", "kernel", "serial ms", "parallel ms", "speedup");
    for (const auto& r : rows) {
        const double s = time_ms(reps, [&] { r.run(k::Exec::serial); });
        const double p = time_ms(reps, [&] { r.run(k::Exec::parallel); });
        std::printf("%-18s %12.3f %12.3f %8.2f\n", r.name, s, p, s / p);
    }

    // outputs must agree exactly
    const bool same = k::cross_gram(a, b, k::Exec::serial) == k::cross_gram(a, b, k::Exec::parallel) &&
                      k::gaussian_kernel(a, b, 4.0, k::Exec::serial) == k::gaussian_kernel(a, b, 4.0, k::Exec::parallel);
    std::printf("bitwise equal: %s\n", same ? "yes" : "NO");
    return same ? 0 : 1;
}
