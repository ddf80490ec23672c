#include <atomic>
#include <cmath>

#include "logicl/kernels.hpp"

namespace logicl::kernels {

namespace serial {

void dot_scan(std::span<const double> query, const Matrix& rows, std::span<double> out) {
    for (std::size_t i = 0; i < rows.rows(); ++i) out[i] = dot(query, rows.row(i));
}

Matrix cross_gram(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
    return out;
}

Matrix gaussian_kernel(const Matrix& a, const Matrix& b, double sigma) {
    const double scale = 1.0 / (2.0 * sigma * sigma);
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j)
            out(i, j) = std::exp(-squared_distance(a.row(i), b.row(j)) * scale);
    return out;
}

Matrix project_rows(const Matrix& w, const Matrix& x) {
    Matrix out(x.rows(), w.rows());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t r = 0; r < w.rows(); ++r) out(i, r) = dot(w.row(r), x.row(i));
    return out;
}

Matrix accumulate_outer(const Matrix& g, const Matrix& x) {
    Matrix out(g.cols(), x.cols());
    for (std::size_t r = 0; r < g.cols(); ++r) {
        auto dst = out.row(r);
        for (std::size_t i = 0; i < g.rows(); ++i) {
            const double coeff = g(i, r);
            if (coeff == 0.0) continue;
            auto src = x.row(i);
            for (std::size_t c = 0; c < x.cols(); ++c) dst[c] += coeff * src[c];
        }
    }
    return out;
}

}  // namespace serial

namespace {
std::atomic<Exec> g_default_exec{Exec::parallel};
}

Exec default_exec() noexcept { return g_default_exec.load(std::memory_order_relaxed); }
void set_default_exec(Exec exec) noexcept { g_default_exec.store(exec, std::memory_order_relaxed); }

void dot_scan(std::span<const double> query, const Matrix& rows, std::span<double> out, Exec exec) {
    exec == Exec::serial ? serial::dot_scan(query, rows, out) : parallel::dot_scan(query, rows, out);
}

Matrix cross_gram(const Matrix& a, const Matrix& b, Exec exec) {
    return exec == Exec::serial ? serial::cross_gram(a, b) : parallel::cross_gram(a, b);
}

Matrix gaussian_kernel(const Matrix& a, const Matrix& b, double sigma, Exec exec) {
    return exec == Exec::serial ? serial::gaussian_kernel(a, b, sigma)
                                : parallel::gaussian_kernel(a, b, sigma);
}

Matrix project_rows(const Matrix& w, const Matrix& x, Exec exec) {
    return exec == Exec::serial ? serial::project_rows(w, x) : parallel::project_rows(w, x);
}

Matrix accumulate_outer(const Matrix& g, const Matrix& x, Exec exec) {
    return exec == Exec::serial ? serial::accumulate_outer(g, x) : parallel::accumulate_outer(g, x);
}

}  // namespace logicl::kernels
