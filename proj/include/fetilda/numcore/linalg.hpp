#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "fetilda/numcore/tensor.hpp"

namespace fetilda::linalg {

class NotPositiveDefinite : public std::runtime_error {
 public:
  NotPositiveDefinite(const std::string& what, double condition_estimate)
      : std::runtime_error(what), condition_estimate_(condition_estimate) {}
  /// (largest diagonal entry / smallest pivot) at the point of failure.
  double condition_estimate() const { return condition_estimate_; }

 private:
  double condition_estimate_;
};

/// In-place lower Cholesky factor of a symmetric positive-definite matrix.
/// The strict upper triangle is left untouched. Throws NotPositiveDefinite.
void cholesky(Tensor& a);

/// Solves L L^T x = b in place given the factor from cholesky().
void cholesky_solve(const Tensor& l, std::span<double> b);

/// x = A^{-1} b for symmetric positive-definite A.
std::vector<double> solve_spd(Tensor a, std::span<const double> b);

/// a^T a for an n x p matrix.
Tensor gram_columns(const Tensor& a);
/// a a^T for an n x p matrix.
Tensor gram_rows(const Tensor& a);

}  // namespace fetilda::linalg
