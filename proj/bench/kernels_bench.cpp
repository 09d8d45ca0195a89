// Parallel kernels against their serial reference forms, at backbone-sized shapes.

#include <benchmark/benchmark.h>

#include "amine/ops.hpp"
#include "amine/reference_ops.hpp"
#include "amine/rng.hpp"

namespace amine {
namespace {

FeatureMap random_map(Shape4 s, Rng& rng) {
  FeatureMap m(s);
  for (double& v : m.values()) v = rng.uniform(-1.0, 1.0);
  return m;
}

ConvKernel random_kernel(std::size_t k, std::size_t d_in, std::size_t d_out, Rng& rng) {
  ConvKernel w(k, k, d_in, d_out);
  for (double& v : w.weights) v = rng.uniform(-0.3, 0.3);
  return w;
}

// Args: spatial side, input channels, output channels, stride.
struct ConvCase {
  FeatureMap input;
  ConvKernel kernel;
  std::size_t stride;
  FeatureMap d_output;

  explicit ConvCase(const benchmark::State& state) {
    Rng rng(1);
    const auto side = static_cast<std::size_t>(state.range(0));
    input = random_map({16, side, side, static_cast<std::size_t>(state.range(1))}, rng);
    kernel = random_kernel(3, input.shape().d, static_cast<std::size_t>(state.range(2)), rng);
    stride = static_cast<std::size_t>(state.range(3));
    d_output = random_map(convolve(input, kernel, stride).shape(), rng);
  }
};

void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({64, 1, 16, 1})->Args({64, 16, 32, 2})->Args({16, 48, 64, 2});
}

void BM_Convolve(benchmark::State& state) {
  const ConvCase c(state);
  for (auto _ : state) benchmark::DoNotOptimize(convolve(c.input, c.kernel, c.stride));
}
BENCHMARK(BM_Convolve)->Apply(conv_args)->Unit(benchmark::kMillisecond);

void BM_ConvolveReference(benchmark::State& state) {
  const ConvCase c(state);
  for (auto _ : state) benchmark::DoNotOptimize(reference::convolve(c.input, c.kernel, c.stride));
}
BENCHMARK(BM_ConvolveReference)->Apply(conv_args)->Unit(benchmark::kMillisecond);

void BM_ConvolveBackward(benchmark::State& state) {
  const ConvCase c(state);
  for (auto _ : state) {
    benchmark::DoNotOptimize(convolve_backward(c.input, c.kernel, c.stride, c.d_output));
  }
}
BENCHMARK(BM_ConvolveBackward)->Apply(conv_args)->Unit(benchmark::kMillisecond);

void BM_ConvolveBackwardReference(benchmark::State& state) {
  const ConvCase c(state);
  for (auto _ : state) {
    benchmark::DoNotOptimize(reference::convolve_backward(c.input, c.kernel, c.stride, c.d_output));
  }
}
BENCHMARK(BM_ConvolveBackwardReference)->Apply(conv_args)->Unit(benchmark::kMillisecond);

FeatureMap pooled_input(const benchmark::State& state) {
  Rng rng(2);
  const auto side = static_cast<std::size_t>(state.range(0));
  return random_map({16, side, side, static_cast<std::size_t>(state.range(1))}, rng);
}

void BM_Gap(benchmark::State& state) {
  const FeatureMap x = pooled_input(state);
  for (auto _ : state) benchmark::DoNotOptimize(gap(x));
}
BENCHMARK(BM_Gap)->Args({16, 48})->Args({64, 16});

void BM_GapReference(benchmark::State& state) {
  const FeatureMap x = pooled_input(state);
  for (auto _ : state) benchmark::DoNotOptimize(reference::gap(x));
}
BENCHMARK(BM_GapReference)->Args({16, 48})->Args({64, 16});

void BM_Upsample(benchmark::State& state) {
  const FeatureMap x = pooled_input(state);
  for (auto _ : state) benchmark::DoNotOptimize(bilinear_upsample2x(x));
}
BENCHMARK(BM_Upsample)->Args({8, 32})->Args({32, 16});

void BM_UpsampleReference(benchmark::State& state) {
  const FeatureMap x = pooled_input(state);
  for (auto _ : state) benchmark::DoNotOptimize(reference::bilinear_upsample2x(x));
}
BENCHMARK(BM_UpsampleReference)->Args({8, 32})->Args({32, 16});

void BM_UpsampleBackward(benchmark::State& state) {
  const FeatureMap x = pooled_input(state);
  const FeatureMap g = bilinear_upsample2x(x);
  for (auto _ : state) benchmark::DoNotOptimize(bilinear_upsample2x_backward(x.shape(), g));
}
BENCHMARK(BM_UpsampleBackward)->Args({8, 32})->Args({32, 16});

void BM_UpsampleBackwardReference(benchmark::State& state) {
  const FeatureMap x = pooled_input(state);
  const FeatureMap g = bilinear_upsample2x(x);
  for (auto _ : state) {
    benchmark::DoNotOptimize(reference::bilinear_upsample2x_backward(x.shape(), g));
  }
}
BENCHMARK(BM_UpsampleBackwardReference)->Args({8, 32})->Args({32, 16});

}  // namespace
}  // namespace amine

BENCHMARK_MAIN();
