// Serial reference vs. tiled vs. OpenMP kernels. Shapes are the Q-network's:
// a 64-row training batch through 256-wide hidden layers, and the hit-curve
// sweep over the desk workload.

#include <benchmark/benchmark.h>

#include <vector>

#include "wincache/desk_profile.hpp"
#include "wincache/kernels.hpp"
#include "wincache/rng.hpp"
#include "wincache/trace_emulator.hpp"

namespace {

using namespace wincache;

struct Operands {
  std::vector<double> a, b, bias, c;
  Operands(int m, int n, int k) : a(std::size_t(m) * k), b(std::size_t(k) * n), bias(n), c(std::size_t(m) * n) {
    CounterRng r(1);
    for (auto* v : {&a, &b, &bias})
      for (double& x : *v) x = r.uniform(-1.0, 1.0);
  }
};

template <void (*F)(int, int, int, const double*, const double*, const double*, bool, double*)>
void bm_gemm(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0)), n = static_cast<int>(state.range(1)),
            k = static_cast<int>(state.range(2));
  Operands op(m, n, k);
  for (auto _ : state) {
    F(m, n, k, op.a.data(), op.b.data(), op.bias.data(), true, op.c.data());
    benchmark::DoNotOptimize(op.c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * m * n * k);
}

void shapes(benchmark::internal::Benchmark* b) {
  b->Args({1, 256, 23})->Args({64, 256, 256})->Args({64, 32, 256})->Args({256, 256, 256});
}

BENCHMARK(bm_gemm<kernels::gemm_reference>)->Name("gemm/reference")->Apply(shapes);
BENCHMARK(bm_gemm<kernels::gemm_serial>)->Name("gemm/serial")->Apply(shapes);
BENCHMARK(bm_gemm<kernels::gemm>)->Name("gemm/openmp")->Apply(shapes);

const Trace& desk_trace() {
  static const Trace t = [] {
    WorkloadSpec w = desk_workload();
    w.num_batches = 256;
    return generate_trace(w);
  }();
  return t;
}

void bm_hit_curve_serial(benchmark::State& state) {
  const auto cache = CacheConfig::uniform(3, desk_capacity());
  for (auto _ : state) benchmark::DoNotOptimize(measure_hit_curve_serial(desk_trace(), kWindowGrid, cache));
}

void bm_hit_curve_openmp(benchmark::State& state) {
  const auto cache = CacheConfig::uniform(3, desk_capacity());
  for (auto _ : state) benchmark::DoNotOptimize(measure_hit_curve(desk_trace(), kWindowGrid, cache));
}

BENCHMARK(bm_hit_curve_serial)->Name("hit_curve/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(bm_hit_curve_openmp)->Name("hit_curve/openmp")->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
