// OpenMP kernels against their serial references, in double and float.
#include <benchmark/benchmark.h>

#include <random>

#include "impnet/kernels.hpp"
#include "impnet/warp.hpp"

namespace {

using namespace impnet;

template <typename T>
BasicTensor<T> filled(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  BasicTensor<T> t(c, h, w);
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

// A desk-sized 3x3 layer: 16 -> 16 channels on a 32x32 map.
template <typename T>
struct ConvCase {
  BasicTensor<T> input = filled<T>(16, 32, 32, 1, -1, 1);
  BasicKernelBank<T> bank{16, 16, 3, 3, ConvGeometry{1, 1, 1}};
  std::vector<T> bias = std::vector<T>(16, T{0.1});
  ConvCase() {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0, 0.1);
    for (auto& w : bank.weights) w = static_cast<T>(n(rng));
  }
};

template <typename T>
void BM_Conv(benchmark::State& state) {
  ConvCase<T> c;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(c.input, c.bank, std::span<const T>(c.bias)));
}

template <typename T>
void BM_ConvReference(benchmark::State& state) {
  ConvCase<T> c;
  for (auto _ : state) benchmark::DoNotOptimize(reference::conv2d(c.input, c.bank, std::span<const T>(c.bias)));
}

template <typename T>
struct WarpCase {
  BasicTensor<T> feature = filled<T>(16, 32, 32, 3, -1, 1);
  BasicTensor<T> flow = filled<T>(2, 32, 32, 4, -3, 3);
  BasicTensor<T> scale = filled<T>(1, 32, 32, 5, 0.5, 1.5);
};

template <typename T>
void BM_Warp(benchmark::State& state) {
  WarpCase<T> c;
  for (auto _ : state) benchmark::DoNotOptimize(bilinear_warp(c.feature, c.flow, c.scale));
}

template <typename T>
void BM_WarpReference(benchmark::State& state) {
  WarpCase<T> c;
  for (auto _ : state) benchmark::DoNotOptimize(reference::bilinear_warp(c.feature, c.flow, c.scale));
}

}  // namespace

BENCHMARK(BM_Conv<double>);
BENCHMARK(BM_ConvReference<double>);
BENCHMARK(BM_Conv<float>);
BENCHMARK(BM_ConvReference<float>);
BENCHMARK(BM_Warp<double>);
BENCHMARK(BM_WarpReference<double>);
BENCHMARK(BM_Warp<float>);
BENCHMARK(BM_WarpReference<float>);

BENCHMARK_MAIN();
