#include <cmath>
#include <cstdint>

#include "logicl/kernels.hpp"

namespace logicl::kernels::parallel {

// Small problems are not worth a thread team.
constexpr std::int64_t kMinParallelWork = 1 << 14;

void dot_scan(std::span<const double> query, const Matrix& rows, std::span<double> out) {
    const auto n = static_cast<std::int64_t>(rows.rows());
    const bool go = n * static_cast<std::int64_t>(rows.cols()) >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (go)
    for (std::int64_t i = 0; i < n; ++i) {
        const auto row = static_cast<std::size_t>(i);
        out[row] = dot(query, rows.row(row));
    }
}

Matrix cross_gram(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.rows());
    const auto n = static_cast<std::int64_t>(a.rows());
    const bool go = n * static_cast<std::int64_t>(b.rows() * a.cols()) >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (go)
    for (std::int64_t i = 0; i < n; ++i) {
        const auto r = static_cast<std::size_t>(i);
        for (std::size_t j = 0; j < b.rows(); ++j) out(r, j) = dot(a.row(r), b.row(j));
    }
    return out;
}

Matrix gaussian_kernel(const Matrix& a, const Matrix& b, double sigma) {
    const double scale = 1.0 / (2.0 * sigma * sigma);
    Matrix out(a.rows(), b.rows());
    const auto n = static_cast<std::int64_t>(a.rows());
    const bool go = n * static_cast<std::int64_t>(b.rows() * a.cols()) >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (go)
    for (std::int64_t i = 0; i < n; ++i) {
        const auto r = static_cast<std::size_t>(i);
        for (std::size_t j = 0; j < b.rows(); ++j)
            out(r, j) = std::exp(-squared_distance(a.row(r), b.row(j)) * scale);
    }
    return out;
}

Matrix project_rows(const Matrix& w, const Matrix& x) {
    Matrix out(x.rows(), w.rows());
    const auto n = static_cast<std::int64_t>(x.rows());
    const bool go = n * static_cast<std::int64_t>(w.rows() * w.cols()) >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (go)
    for (std::int64_t i = 0; i < n; ++i) {
        const auto row = static_cast<std::size_t>(i);
        for (std::size_t r = 0; r < w.rows(); ++r) out(row, r) = dot(w.row(r), x.row(row));
    }
    return out;
}

Matrix accumulate_outer(const Matrix& g, const Matrix& x) {
    // Parallel over output rows; the sum over samples stays sequential per row.
    Matrix out(g.cols(), x.cols());
    const auto n = static_cast<std::int64_t>(g.cols());
    const bool go = n * static_cast<std::int64_t>(g.rows() * x.cols()) >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (go)
    for (std::int64_t rr = 0; rr < n; ++rr) {
        const auto r = static_cast<std::size_t>(rr);
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

}  // namespace logicl::kernels::parallel
