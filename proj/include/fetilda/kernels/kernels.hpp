#pragma once

#include <cstddef>
#include <span>

// Dense inner loops used by the autodiff ops and the kernel regressors.
//
// Every kernel exists twice: `serial::` is the plain reference loop kept for
// testing, `parallel::` splits the outermost output dimension across OpenMP
// threads. Each output element is produced by exactly one thread with the same
// summation order as the serial loop, so both variants are bit-identical.
// The unqualified entry points pick one by problem size.

namespace fetilda::kernels {

// Row-major shapes throughout. `accumulate` adds into `c` instead of
// overwriting it.

namespace serial {
/// c[m x n] (+)= a[m x k] * b[k x n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
/// c[m x n] (+)= a[m x k] * b[n x k]^T
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
/// c[m x n] (+)= a[k x m]^T * b[k x n]
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
/// out[n x m] = exp(-gamma * ||x_i - y_j||^2), x is n x d, y is m x d.
void rbf_gram(std::span<const double> x, std::span<const double> y, std::span<double> out,
              std::size_t n, std::size_t m, std::size_t d, double gamma);
}  // namespace serial

namespace parallel {
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void rbf_gram(std::span<const double> x, std::span<const double> y, std::span<double> out,
              std::size_t n, std::size_t m, std::size_t d, double gamma);
}  // namespace parallel

/// Multiply-adds below which the serial loop is used.
inline constexpr std::size_t kParallelThreshold = 1 << 16;

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void rbf_gram(std::span<const double> x, std::span<const double> y, std::span<double> out,
              std::size_t n, std::size_t m, std::size_t d, double gamma);

}  // namespace fetilda::kernels
