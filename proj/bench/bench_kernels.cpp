// Serial reference vs OpenMP kernels on translator- and denoiser-shaped
// products. Run with OMP_NUM_THREADS set to compare thread counts.

#include <benchmark/benchmark.h>

#include <vector>

#include "imagine/kernels.hpp"
#include "imagine/rng.hpp"

namespace {

using namespace imagine;

std::vector<double> random_matrix(std::size_t n, std::uint64_t seed) {
  RngStream r(seed);
  std::vector<double> v(n);
  for (double& x : v) x = r.normal();
  return v;
}

template <auto Kernel>
void bm_matmul(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = random_matrix(m * k, 1), b = random_matrix(k * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    Kernel(a, b, c, m, k, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * k * n));
}

template <auto Kernel>
void bm_tanh(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_matrix(n, 3);
  std::vector<double> y(n);
  for (auto _ : state) {
    Kernel(x, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}

void shapes(benchmark::internal::Benchmark* b) {
  b->Args({32, 75, 128});    // denoiser first layer
  b->Args({32, 128, 128});   // denoiser hidden layer
  b->Args({704, 64, 256});   // translator feed-forward, 32 sequences
  b->Args({704, 256, 64});
  b->Args({2200, 64, 256});
}

}  // namespace

BENCHMARK(bm_matmul<kernels::serial::matmul_nn>)->Apply(shapes);
BENCHMARK(bm_matmul<kernels::parallel::matmul_nn>)->Apply(shapes);
BENCHMARK(bm_matmul<kernels::serial::matmul_nt>)->Apply(shapes);
BENCHMARK(bm_matmul<kernels::parallel::matmul_nt>)->Apply(shapes);
BENCHMARK(bm_matmul<kernels::serial::matmul_tn>)->Apply(shapes);
BENCHMARK(bm_matmul<kernels::parallel::matmul_tn>)->Apply(shapes);
BENCHMARK(bm_tanh<kernels::serial::tanh_forward>)->Arg(1 << 12)->Arg(1 << 16);
BENCHMARK(bm_tanh<kernels::parallel::tanh_forward>)->Arg(1 << 12)->Arg(1 << 16);

BENCHMARK_MAIN();
