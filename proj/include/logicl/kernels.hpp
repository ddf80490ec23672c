#pragma once

// Data-parallel inner loops shared by retrieval, encoding and training.
//
// Every kernel exists twice: a serial reference in namespace `serial` and an
// OpenMP version in namespace `parallel`. Each output element is produced by
// exactly one thread with the same operation order as the reference, so the
// two agree bit-for-bit. Reductions across rows are never split between
// threads.

#include <span>

#include "logicl/linalg.hpp"

namespace logicl::kernels {

enum class Exec { serial, parallel };

namespace serial {
/// out[i] = <query, rows.row(i)>
void dot_scan(std::span<const double> query, const Matrix& rows, std::span<double> out);
/// out(i, j) = <a.row(i), b.row(j)>
Matrix cross_gram(const Matrix& a, const Matrix& b);
/// out(i, j) = exp(-||a_i - b_j||^2 / (2 sigma^2))
Matrix gaussian_kernel(const Matrix& a, const Matrix& b, double sigma);
/// out.row(i) = W * x.row(i)
Matrix project_rows(const Matrix& w, const Matrix& x);
/// out(r, c) = sum_i g(i, r) * x(i, c), summed in ascending i
Matrix accumulate_outer(const Matrix& g, const Matrix& x);
}  // namespace serial

namespace parallel {
void dot_scan(std::span<const double> query, const Matrix& rows, std::span<double> out);
Matrix cross_gram(const Matrix& a, const Matrix& b);
Matrix gaussian_kernel(const Matrix& a, const Matrix& b, double sigma);
Matrix project_rows(const Matrix& w, const Matrix& x);
Matrix accumulate_outer(const Matrix& g, const Matrix& x);
}  // namespace parallel

/// Process-wide default used by the dispatching overloads below.
Exec default_exec() noexcept;
void set_default_exec(Exec exec) noexcept;

void dot_scan(std::span<const double> query, const Matrix& rows, std::span<double> out,
              Exec exec = default_exec());
Matrix cross_gram(const Matrix& a, const Matrix& b, Exec exec = default_exec());
Matrix gaussian_kernel(const Matrix& a, const Matrix& b, double sigma, Exec exec = default_exec());
Matrix project_rows(const Matrix& w, const Matrix& x, Exec exec = default_exec());
Matrix accumulate_outer(const Matrix& g, const Matrix& x, Exec exec = default_exec());

}  // namespace logicl::kernels
