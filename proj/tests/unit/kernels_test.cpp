#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fetilda/kernels/kernels.hpp"
#include "fetilda/rng.hpp"

using namespace fetilda;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

}  // namespace

// The parallel kernels must reproduce the serial reference bit for bit.
TEST(Kernels, ParallelMatchesSerialBitwise) {
  Rng rng(12);
  for (auto [m, k, n] : {std::tuple{1, 1, 1}, {7, 5, 3}, {64, 48, 33}, {129, 70, 65}}) {
    const auto a = random_vec(m * k, rng);
    const auto b = random_vec(k * n, rng);
    const auto bt = random_vec(n * k, rng);
    const auto at = random_vec(k * m, rng);
    std::vector<double> c1(m * n), c2(m * n);

    kernels::serial::matmul(a, b, c1, m, k, n);
    kernels::parallel::matmul(a, b, c2, m, k, n);
    EXPECT_EQ(c1, c2);

    kernels::serial::matmul_nt(a, bt, c1, m, k, n, true);
    kernels::parallel::matmul_nt(a, bt, c2, m, k, n, true);
    EXPECT_EQ(c1, c2);

    kernels::serial::matmul_tn(at, b, c1, m, k, n, true);
    kernels::parallel::matmul_tn(at, b, c2, m, k, n, true);
    EXPECT_EQ(c1, c2);

    kernels::matmul(a, b, c2, m, k, n);
    kernels::serial::matmul(a, b, c1, m, k, n);
    EXPECT_EQ(c1, c2);
  }
}

TEST(Kernels, MatmulVariantsAgreeWithNaiveTriple) {
  Rng rng(3);
  const std::size_t m = 4, k = 6, n = 5;
  const auto a = random_vec(m * k, rng);
  const auto b = random_vec(k * n, rng);
  std::vector<double> c(m * n);
  kernels::matmul(a, b, c, m, k, n);
  // a^T stored as k x m, b^T stored as n x k.
  std::vector<double> at(k * m), bt(n * k);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) at[p * m + i] = a[i * k + p];
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  std::vector<double> c_nt(m * n), c_tn(m * n);
  kernels::matmul_nt(a, bt, c_nt, m, k, n);
  kernels::matmul_tn(at, b, c_tn, m, k, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      EXPECT_NEAR(c[i * n + j], s, 1e-14);
      EXPECT_NEAR(c_nt[i * n + j], s, 1e-14);
      EXPECT_NEAR(c_tn[i * n + j], s, 1e-14);
    }
  }
}

TEST(Kernels, RbfGramParallelMatchesSerial) {
  Rng rng(4);
  const std::size_t n = 300, m = 250, d = 9;
  const auto x = random_vec(n * d, rng);
  const auto y = random_vec(m * d, rng);
  std::vector<double> g1(n * m), g2(n * m);
  kernels::serial::rbf_gram(x, y, g1, n, m, d, 0.1);
  kernels::parallel::rbf_gram(x, y, g2, n, m, d, 0.1);
  EXPECT_EQ(g1, g2);
  std::vector<double> self(n * n);
  kernels::rbf_gram(x, x, self, n, n, d, 0.1);
  for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(self[i * n + i], 1.0);
}
