#include <cmath>

#include "fetilda/kernels/kernels.hpp"

namespace fetilda::kernels::serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c.data() + i * n;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
    }
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c.data() + i * n;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
    }
    for (std::size_t p = 0; p < k; ++p) {
      const double api = a[p * m + i];
      const double* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

void rbf_gram(std::span<const double> x, std::span<const double> y, std::span<double> out,
              std::size_t n, std::size_t m, std::size_t d, double gamma) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.data() + i * d;
    for (std::size_t j = 0; j < m; ++j) {
      const double* yj = y.data() + j * d;
      double s = 0.0;
      for (std::size_t p = 0; p < d; ++p) {
        const double diff = xi[p] - yj[p];
        s += diff * diff;
      }
      out[i * m + j] = std::exp(-gamma * s);
    }
  }
}

}  // namespace fetilda::kernels::serial
