// Serial reference kernels against their OpenMP counterparts, plus one
// end-to-end forward pass per backend.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "citnet/citnet.hpp"
#include "citnet/kernels.hpp"

namespace k = citnet::kernels;

namespace {

std::vector<float> random_buffer(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(-1, 1);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  const auto a = random_buffer(n * n, 1), b = random_buffer(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if (Parallel) k::parallel::gemm<float>(n, n, n, a.data(), b.data(), c.data(), false);
    else k::serial::gemm<float>(n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::OneK::kIs1000);
}

template <bool Parallel>
void BM_Im2col(benchmark::State& state) {
  const std::int64_t c = state.range(0), s = 56;
  const k::ConvGeometry g{c, s, s, 3, 3, 1, 1, s, s};
  const auto x = random_buffer(c * s * s, 3);
  std::vector<float> cols(c * 9 * s * s);
  for (auto _ : state) {
    if (Parallel) k::parallel::im2col<float>(g, x.data(), cols.data());
    else k::serial::im2col<float>(g, x.data(), cols.data());
    benchmark::DoNotOptimize(cols.data());
  }
}

template <bool Parallel>
void BM_Bilinear(benchmark::State& state) {
  const std::int64_t c = state.range(0), s = 56, points = 9 * s * s;
  const auto x = random_buffer(c * s * s, 4);
  auto ys = random_buffer(points, 5), xs = random_buffer(points, 6);
  for (std::int64_t i = 0; i < points; ++i) {
    ys[i] = (ys[i] + 1) * s / 2;
    xs[i] = (xs[i] + 1) * s / 2;
  }
  std::vector<float> out(c * points);
  for (auto _ : state) {
    if (Parallel) k::parallel::bilinear_forward<float>(c, s, s, points, x.data(), ys.data(), xs.data(), out.data());
    else k::serial::bilinear_forward<float>(c, s, s, points, x.data(), ys.data(), xs.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_Softmax(benchmark::State& state) {
  const std::int64_t rows = state.range(0), len = 49;
  const auto x = random_buffer(rows * len, 7);
  std::vector<float> y(rows * len);
  for (auto _ : state) {
    if (Parallel) k::parallel::softmax_forward<float>(rows, len, 1, x.data(), y.data());
    else k::serial::softmax_forward<float>(rows, len, 1, x.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_Depthwise(benchmark::State& state) {
  const std::int64_t c = state.range(0), s = 56;
  const k::ConvGeometry g{c, s, s, 3, 3, 1, 1, s, s};
  const auto x = random_buffer(c * s * s, 8), w = random_buffer(c * 9, 9);
  std::vector<float> out(c * s * s);
  for (auto _ : state) {
    if (Parallel) k::parallel::depthwise_forward<float>(g, x.data(), w.data(), out.data());
    else k::serial::depthwise_forward<float>(g, x.data(), w.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_ToyForward(benchmark::State& state) {
  k::set_backend(Parallel ? k::Backend::Parallel : k::Backend::Serial);
  const auto cfg = citnet::ModelConfig::preset("toy");
  const citnet::CiTNet<float> model(cfg, 1);
  citnet::Rng rng(1);
  const auto x = citnet::Tensor<float>::uniform({1, 1, 56, 56}, rng, 0, 1);
  citnet::NoGradScope<float> no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x).data().data());
  k::set_backend(k::Backend::Parallel);
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(128)->Arg(512);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(128)->Arg(512);
BENCHMARK(BM_Im2col<false>)->Name("im2col/serial")->Arg(32)->Arg(96);
BENCHMARK(BM_Im2col<true>)->Name("im2col/parallel")->Arg(32)->Arg(96);
BENCHMARK(BM_Bilinear<false>)->Name("bilinear/serial")->Arg(32);
BENCHMARK(BM_Bilinear<true>)->Name("bilinear/parallel")->Arg(32);
BENCHMARK(BM_Softmax<false>)->Name("softmax/serial")->Arg(4096);
BENCHMARK(BM_Softmax<true>)->Name("softmax/parallel")->Arg(4096);
BENCHMARK(BM_Depthwise<false>)->Name("depthwise/serial")->Arg(128);
BENCHMARK(BM_Depthwise<true>)->Name("depthwise/parallel")->Arg(128);
BENCHMARK(BM_ToyForward<false>)->Name("toy_forward/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ToyForward<true>)->Name("toy_forward/parallel")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
