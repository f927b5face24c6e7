// Serial reference vs OpenMP kernels on shapes from the mlp-small and
// lenet-lite presets.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "sfl/kernels.hpp"

namespace k = sfl::kernels;

namespace {

std::vector<float> noise(std::size_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> nd;
  std::vector<float> v(n);
  for (float& x : v) x = nd(rng);
  return v;
}

template <bool Omp>
void BM_DenseForward(benchmark::State& state) {
  const k::DenseDims d{static_cast<std::size_t>(state.range(0)), 256, 64};
  auto x = noise(d.batch * d.in, 1), w = noise(d.in * d.out, 2), b = noise(d.out, 3);
  std::vector<float> y(d.batch * d.out);
  for (auto _ : state) {
    if constexpr (Omp) k::omp::dense_forward(d, x, w, b, y);
    else k::serial::dense_forward(d, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * d.batch);
}

template <bool Omp>
void BM_DenseBackward(benchmark::State& state) {
  const k::DenseDims d{static_cast<std::size_t>(state.range(0)), 256, 64};
  auto x = noise(d.batch * d.in, 1), w = noise(d.in * d.out, 2), gy = noise(d.batch * d.out, 3);
  std::vector<float> gw(w.size()), gb(d.out), gx(x.size());
  for (auto _ : state) {
    if constexpr (Omp) k::omp::dense_backward(d, x, w, gy, gw, gb, gx);
    else k::serial::dense_backward(d, x, w, gy, gw, gb, gx);
    benchmark::DoNotOptimize(gx.data());
  }
  state.SetItemsProcessed(state.iterations() * d.batch);
}

template <bool Omp>
void BM_ConvForward(benchmark::State& state) {
  const k::ConvDims d{static_cast<std::size_t>(state.range(0)), 1, 28, 28, 6, 5};
  auto x = noise(d.batch * 28 * 28, 1), w = noise(6 * 25, 2), b = noise(6, 3);
  std::vector<float> y(d.batch * 6 * d.out_h() * d.out_w());
  for (auto _ : state) {
    if constexpr (Omp) k::omp::conv2d_forward(d, x, w, b, y);
    else k::serial::conv2d_forward(d, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * d.batch);
}

template <bool Omp>
void BM_ConvBackward(benchmark::State& state) {
  const k::ConvDims d{static_cast<std::size_t>(state.range(0)), 1, 28, 28, 6, 5};
  auto x = noise(d.batch * 28 * 28, 1), w = noise(6 * 25, 2);
  auto gy = noise(d.batch * 6 * d.out_h() * d.out_w(), 3);
  std::vector<float> gw(w.size()), gb(6), gx(x.size());
  for (auto _ : state) {
    if constexpr (Omp) k::omp::conv2d_backward(d, x, w, gy, gw, gb, gx);
    else k::serial::conv2d_backward(d, x, w, gy, gw, gb, gx);
    benchmark::DoNotOptimize(gx.data());
  }
  state.SetItemsProcessed(state.iterations() * d.batch);
}

template <bool Omp>
void BM_MaxPool(benchmark::State& state) {
  const k::PoolDims d{static_cast<std::size_t>(state.range(0)), 6, 24, 24, 2, 2};
  auto x = noise(d.batch * 6 * 24 * 24, 1);
  const std::size_t n = d.batch * 6 * d.out_h() * d.out_w();
  std::vector<float> y(n);
  std::vector<uint32_t> arg(n);
  for (auto _ : state) {
    if constexpr (Omp) k::omp::maxpool_forward(d, x, y, arg);
    else k::serial::maxpool_forward(d, x, y, arg);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * d.batch);
}

template <bool Omp>
void BM_PairwiseDistances(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> x(n * 64), out(n * n);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  for (double& v : x) v = nd(rng);
  for (auto _ : state) {
    if constexpr (Omp) k::omp::pairwise_distances(n, 64, x, out);
    else k::serial::pairwise_distances(n, 64, x, out);
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_DenseForward<false>)->Name("dense_forward/serial")->Arg(32)->Arg(256);
BENCHMARK(BM_DenseForward<true>)->Name("dense_forward/omp")->Arg(32)->Arg(256);
BENCHMARK(BM_DenseBackward<false>)->Name("dense_backward/serial")->Arg(32)->Arg(256);
BENCHMARK(BM_DenseBackward<true>)->Name("dense_backward/omp")->Arg(32)->Arg(256);
BENCHMARK(BM_ConvForward<false>)->Name("conv2d_forward/serial")->Arg(32);
BENCHMARK(BM_ConvForward<true>)->Name("conv2d_forward/omp")->Arg(32);
BENCHMARK(BM_ConvBackward<false>)->Name("conv2d_backward/serial")->Arg(32);
BENCHMARK(BM_ConvBackward<true>)->Name("conv2d_backward/omp")->Arg(32);
BENCHMARK(BM_MaxPool<false>)->Name("maxpool_forward/serial")->Arg(32);
BENCHMARK(BM_MaxPool<true>)->Name("maxpool_forward/omp")->Arg(32);
BENCHMARK(BM_PairwiseDistances<false>)->Name("pairwise_distances/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_PairwiseDistances<true>)->Name("pairwise_distances/omp")->Arg(64)->Arg(256);

BENCHMARK_MAIN();
