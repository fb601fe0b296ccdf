#include <cmath>
#include <cstdint>

#include "fetilda/kernels/kernels.hpp"

namespace fetilda::kernels {

namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
  for (std::int64_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
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
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
  for (std::int64_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
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
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
  for (std::int64_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
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
  const auto rows = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
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

}  // namespace parallel

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  if (m > 1 && m * k * n >= kParallelThreshold) {
    parallel::matmul(a, b, c, m, k, n, accumulate);
  } else {
    serial::matmul(a, b, c, m, k, n, accumulate);
  }
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  if (m > 1 && m * k * n >= kParallelThreshold) {
    parallel::matmul_nt(a, b, c, m, k, n, accumulate);
  } else {
    serial::matmul_nt(a, b, c, m, k, n, accumulate);
  }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  if (m > 1 && m * k * n >= kParallelThreshold) {
    parallel::matmul_tn(a, b, c, m, k, n, accumulate);
  } else {
    serial::matmul_tn(a, b, c, m, k, n, accumulate);
  }
}

void rbf_gram(std::span<const double> x, std::span<const double> y, std::span<double> out,
              std::size_t n, std::size_t m, std::size_t d, double gamma) {
  if (n > 1 && n * m * d >= kParallelThreshold) {
    parallel::rbf_gram(x, y, out, n, m, d, gamma);
  } else {
    serial::rbf_gram(x, y, out, n, m, d, gamma);
  }
}

}  // namespace fetilda::kernels
