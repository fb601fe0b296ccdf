#include "fetilda/numcore/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fetilda/kernels/kernels.hpp"

namespace fetilda::linalg {

void cholesky(Tensor& a) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw ShapeError("cholesky: matrix is not square " + shape_str(a.shape()));
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(a.at(i, i)));
  for (std::size_t j = 0; j < n; ++j) {
    double d = a.at(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= a.at(j, k) * a.at(j, k);
    if (!(d > 0.0)) {
      const double cond = d > 0.0 ? max_diag / d : std::numeric_limits<double>::infinity();
      throw NotPositiveDefinite("matrix is not positive definite (pivot " + std::to_string(j) + " = " +
                                    std::to_string(d) + ", condition estimate " + std::to_string(cond) + ")",
                                cond);
    }
    const double ljj = std::sqrt(d);
    a.at(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a.at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= a.at(i, k) * a.at(j, k);
      a.at(i, j) = s / ljj;
    }
  }
}

void cholesky_solve(const Tensor& l, std::span<double> b) {
  const std::size_t n = l.rows();
  if (b.size() != n) throw ShapeError("cholesky_solve: rhs length mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l.at(i, k) * b[k];
    b[i] = s / l.at(i, i);
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= l.at(k, i) * b[k];
    b[i] = s / l.at(i, i);
  }
}

std::vector<double> solve_spd(Tensor a, std::span<const double> b) {
  cholesky(a);
  std::vector<double> x(b.begin(), b.end());
  cholesky_solve(a, x);
  return x;
}

Tensor gram_columns(const Tensor& a) {
  Tensor g(Shape{a.cols(), a.cols()});
  kernels::matmul_tn(a.data(), a.data(), g.data(), a.cols(), a.rows(), a.cols());
  return g;
}

Tensor gram_rows(const Tensor& a) {
  Tensor g(Shape{a.rows(), a.rows()});
  kernels::matmul_nt(a.data(), a.data(), g.data(), a.rows(), a.cols(), a.rows());
  return g;
}

}  // namespace fetilda::linalg
