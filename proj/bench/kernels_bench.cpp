// Serial reference loops against their OpenMP counterparts. Run with
// OMP_NUM_THREADS set to compare thread counts.

#include <benchmark/benchmark.h>

#include <vector>

#include "fetilda/kernels/kernels.hpp"
#include "fetilda/rng.hpp"

namespace k = fetilda::kernels;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  fetilda::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

template <auto Kernel>
void square_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    Kernel(a, b, c, n, n, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

template <auto Kernel>
void gram(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  constexpr std::size_t d = 64;
  const auto x = random_values(n * d, 3);
  std::vector<double> out(n * n);
  for (auto _ : state) {
    Kernel(x, x, out, n, n, d, 0.1);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * d));
}

}  // namespace

BENCHMARK(square_matmul<k::serial::matmul>)->Name("matmul/serial")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(square_matmul<k::parallel::matmul>)->Name("matmul/parallel")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(square_matmul<k::serial::matmul_nt>)->Name("matmul_nt/serial")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(square_matmul<k::parallel::matmul_nt>)->Name("matmul_nt/parallel")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(square_matmul<k::serial::matmul_tn>)->Name("matmul_tn/serial")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(square_matmul<k::parallel::matmul_tn>)->Name("matmul_tn/parallel")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(gram<k::serial::rbf_gram>)->Name("rbf_gram/serial")->RangeMultiplier(2)->Range(128, 1024);
BENCHMARK(gram<k::parallel::rbf_gram>)->Name("rbf_gram/parallel")->RangeMultiplier(2)->Range(128, 1024);

BENCHMARK_MAIN();
