// Serial reference kernels against the OpenMP ones, same inputs.
#include <benchmark/benchmark.h>

#include <vector>

#include "flood/kernels.hpp"
#include "flood/random.hpp"

namespace k = flood::kernels;
using flood::Index;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  flood::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform() * 2 - 1);
  return v;
}

template <bool Parallel>
void BM_gemm(benchmark::State& state) {
  const Index n = state.range(0);
  const auto a = random_vec(static_cast<std::size_t>(n * n), 1);
  const auto b = random_vec(static_cast<std::size_t>(n * n), 2);
  std::vector<float> c(static_cast<std::size_t>(n * n));
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::gemm(k::Trans::no, k::Trans::no, n, n, n, a.data(), b.data(), c.data(), false);
    } else {
      k::reference::gemm(k::Trans::no, k::Trans::no, n, n, n, a.data(), b.data(), c.data(), false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] =
      benchmark::Counter(2.0 * static_cast<double>(n * n * n), benchmark::Counter::kIsIterationInvariantRate,
                         benchmark::Counter::kIs1000);
}

template <bool Parallel>
void BM_im2col(benchmark::State& state) {
  const Index s = state.range(0);
  const k::ConvGeometry g{s, s, 16, 3, 3, 1, 1};
  const auto x = random_vec(static_cast<std::size_t>(s * s * 16), 3);
  std::vector<float> cols(static_cast<std::size_t>(g.out_h() * g.out_w() * g.patch()));
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::im2col(g, 1, x.data(), cols.data());
    } else {
      k::reference::im2col(g, 1, x.data(), cols.data());
    }
    benchmark::DoNotOptimize(cols.data());
  }
}

template <bool Parallel>
void BM_softmax(benchmark::State& state) {
  const Index rows = state.range(0), cols = 256;
  const auto x = random_vec(static_cast<std::size_t>(rows * cols), 4);
  std::vector<float> y(x.size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::softmax_rows(rows, cols, x.data(), y.data());
    } else {
      k::reference::softmax_rows(rows, cols, x.data(), y.data());
    }
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_gemm<true>)->Name("gemm/openmp")->Arg(64)->Arg(256);
BENCHMARK(BM_im2col<false>)->Name("im2col/serial")->Arg(64)->Arg(128);
BENCHMARK(BM_im2col<true>)->Name("im2col/openmp")->Arg(64)->Arg(128);
BENCHMARK(BM_softmax<false>)->Name("softmax/serial")->Arg(1024);
BENCHMARK(BM_softmax<true>)->Name("softmax/openmp")->Arg(1024);
BENCHMARK_MAIN();
