#include <benchmark/benchmark.h>

#include "gradflow/maximal.hpp"
#include "gradflow/semigroup.hpp"
#include "gradflow/verify.hpp"

using namespace gradflow;

namespace {

Grid bench_grid(int dim, int n) {
  return dim == 1 ? Grid(n, 1.0 / n, Boundary::Periodic)
                  : Grid(n, n, 1.0 / n, Boundary::Periodic);
}

void bm_proximal_step(benchmark::State& state) {
  const int dim = static_cast<int>(state.range(0));
  const int n = static_cast<int>(state.range(1));
  Grid g = bench_grid(dim, n);
  GridFunction f = generate_data(g, DataGenerator::Bumps, 1);
  VariationalKernel k = VariationalKernel::ppower(4.0);
  ProximalConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(proximal_step(f, 0.01, k, cfg));
}
BENCHMARK(bm_proximal_step)->Args({1, 256})->Args({2, 32})->Args({2, 64})
    ->Unit(benchmark::kMillisecond);

void bm_heat_apply_spectral(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Grid g = bench_grid(2, n);
  EllipticOperator op = EllipticOperator::assemble(g, CoefficientField::identity(g));
  op.spectral();  // decomposition cost excluded
  GridFunction f = generate_data(g, DataGenerator::Bumps, 1);
  for (auto _ : state) benchmark::DoNotOptimize(heat_apply(op, f, 0.1));
}
BENCHMARK(bm_heat_apply_spectral)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void bm_spectral_decomposition(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Grid g = bench_grid(2, n);
  CoefficientField a = CoefficientField::random_spd(g, 10.0, 7);
  for (auto _ : state) {
    EllipticOperator op = EllipticOperator::assemble(g, a);
    benchmark::DoNotOptimize(op.spectral().eigenvalues.back());
  }
}
BENCHMARK(bm_spectral_decomposition)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void bm_hardy_littlewood(benchmark::State& state) {
  const int dim = static_cast<int>(state.range(0));
  const int n = static_cast<int>(state.range(1));
  Grid g = bench_grid(dim, n);
  GridFunction f = generate_data(g, DataGenerator::Fourier, 3);
  for (auto _ : state) benchmark::DoNotOptimize(hardy_littlewood_max(f));
}
BENCHMARK(bm_hardy_littlewood)->Args({1, 128})->Args({1, 512})->Args({2, 64})
    ->Unit(benchmark::kMillisecond);

void bm_vertical_max_heat(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Grid g = bench_grid(2, n);
  EllipticOperator op = EllipticOperator::assemble(g, CoefficientField::identity(g));
  op.spectral();
  GridFunction f = generate_data(g, DataGenerator::Bumps, 2);
  TimeGrid tg = TimeGrid::geometric(1e-4, 1.25, 10.0);
  for (auto _ : state) {
    Extension ext = extend_semigroup(op, f, tg, Source::Heat);
    benchmark::DoNotOptimize(vertical_max(ext).m[0]);
  }
}
BENCHMARK(bm_vertical_max_heat)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
