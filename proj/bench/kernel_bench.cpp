// Parallel kernels against their serial references at training-step sizes.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "autodo/kernels.hpp"

namespace k = autodo::kernels;

namespace {

std::vector<double> filled(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

k::ConvDims conv_dims(const benchmark::State& s) { return {64, s.range(0), s.range(1), 16, 16}; }

template <auto Fn>
void conv_forward(benchmark::State& state) {
  const auto d = conv_dims(state);
  auto x = filled(d.batch * d.in_ch * d.height * d.width, 1), w = filled(d.out_ch * d.in_ch * 9, 2);
  std::vector<double> out(d.batch * d.out_ch * d.height * d.width);
  for (auto _ : state) {
    Fn(x, w, out, d);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * d.batch);
}

template <auto Fn>
void conv_weight_grad(benchmark::State& state) {
  const auto d = conv_dims(state);
  auto x = filled(d.batch * d.in_ch * d.height * d.width, 1), g = filled(d.batch * d.out_ch * d.height * d.width, 3);
  std::vector<double> gw(d.out_ch * d.in_ch * 9);
  for (auto _ : state) {
    Fn(x, g, gw, d);
    benchmark::DoNotOptimize(gw.data());
  }
  state.SetItemsProcessed(state.iterations() * d.batch);
}

template <auto Fn>
void matmul(benchmark::State& state) {
  const k::MatmulDims d{state.range(0), state.range(1), state.range(2)};
  auto a = filled(d.m * d.k, 1), b = filled(d.k * d.n, 2);
  std::vector<double> out(d.m * d.n);
  for (auto _ : state) {
    Fn(a, b, out, d);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * d.m * d.k * d.n);
}

template <auto Fn>
void grid_sample(benchmark::State& state) {
  const k::SampleDims d{state.range(0), 1, 16, 16, 16, 16};
  auto img = filled(d.batch * d.in_h * d.in_w, 1), grid = filled(d.batch * d.out_h * d.out_w * 2, 2);
  std::vector<double> out(d.batch * d.out_h * d.out_w);
  for (auto _ : state) {
    Fn(img, grid, out, d);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * d.batch);
}

}  // namespace

BENCHMARK(conv_forward<k::conv3x3>)->Name("conv3x3/parallel")->Args({1, 8})->Args({8, 16});
BENCHMARK(conv_forward<k::reference::conv3x3>)->Name("conv3x3/reference")->Args({1, 8})->Args({8, 16});
BENCHMARK(conv_weight_grad<k::conv3x3_weight_grad>)->Name("conv3x3_weight_grad/parallel")->Args({8, 16});
BENCHMARK(conv_weight_grad<k::reference::conv3x3_weight_grad>)->Name("conv3x3_weight_grad/reference")->Args({8, 16});
BENCHMARK(matmul<k::matmul>)->Name("matmul/parallel")->Args({64, 256, 10})->Args({128, 128, 128});
BENCHMARK(matmul<k::reference::matmul>)->Name("matmul/reference")->Args({64, 256, 10})->Args({128, 128, 128});
BENCHMARK(grid_sample<k::grid_sample>)->Name("grid_sample/parallel")->Arg(64);
BENCHMARK(grid_sample<k::reference::grid_sample>)->Name("grid_sample/reference")->Arg(64);

BENCHMARK_MAIN();
