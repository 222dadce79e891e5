// Serial vs OpenMP kernel comparison across the sizes the classifier uses.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mifuse/kernels.hpp"

namespace {

using mifuse::kernels::matvec;
using mifuse::kernels::outer_accum;
namespace serial = mifuse::kernels::serial;

struct MatvecFixture {
  std::vector<double> w, x, b, y;
  std::size_t rows, cols;
  MatvecFixture(std::size_t rows, std::size_t cols) : rows(rows), cols(cols) {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> dist(-1, 1);
    w.resize(rows * cols);
    x.resize(cols);
    b.resize(rows);
    y.resize(rows);
    for (double& v : w) v = dist(rng);
    for (double& v : x) v = dist(rng);
    for (double& v : b) v = dist(rng);
  }
};

void bm_matvec_serial(benchmark::State& state) {
  MatvecFixture f(static_cast<std::size_t>(state.range(0)),
                  static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) {
    serial::matvec(f.w, f.rows, f.cols, f.x, f.b, f.y);
    benchmark::DoNotOptimize(f.y.data());
  }
  state.SetItemsProcessed(state.iterations() *
                          static_cast<std::int64_t>(f.rows * f.cols));
}

void bm_matvec_parallel(benchmark::State& state) {
  MatvecFixture f(static_cast<std::size_t>(state.range(0)),
                  static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) {
    matvec(f.w, f.rows, f.cols, f.x, f.b, f.y);
    benchmark::DoNotOptimize(f.y.data());
  }
  state.SetItemsProcessed(state.iterations() *
                          static_cast<std::int64_t>(f.rows * f.cols));
}

void bm_outer_serial(benchmark::State& state) {
  MatvecFixture f(static_cast<std::size_t>(state.range(0)),
                  static_cast<std::size_t>(state.range(1)));
  std::vector<double> out(f.rows * f.cols, 0.0);
  for (auto _ : state) {
    serial::outer_accum(out, f.b, f.x);
    benchmark::DoNotOptimize(out.data());
  }
}

void bm_outer_parallel(benchmark::State& state) {
  MatvecFixture f(static_cast<std::size_t>(state.range(0)),
                  static_cast<std::size_t>(state.range(1)));
  std::vector<double> out(f.rows * f.cols, 0.0);
  for (auto _ : state) {
    outer_accum(out, f.b, f.x);
    benchmark::DoNotOptimize(out.data());
  }
}

void sizes(benchmark::internal::Benchmark* b) {
  b->Args({256, 1024})->Args({1024, 1024})->Args({4096, 4096});
}

BENCHMARK(bm_matvec_serial)->Apply(sizes);
BENCHMARK(bm_matvec_parallel)->Apply(sizes);
BENCHMARK(bm_outer_serial)->Apply(sizes);
BENCHMARK(bm_outer_parallel)->Apply(sizes);

}  // namespace

BENCHMARK_MAIN();
