// Serial reference vs OpenMP kernels on representative sizes.
#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "lacune/kernels.hpp"

using namespace lacune;

namespace {

Mask3D sparse_mask(Shape3 s, Spacing3 sp, double density, unsigned seed) {
  Mask3D m(s, sp, 0);
  std::mt19937 rng(seed);
  std::bernoulli_distribution on(density);
  for (auto& v : m.data()) v = on(rng) ? 1 : 0;
  return m;
}

Volume3D noise_volume(Shape3 s, unsigned seed) {
  Volume3D v(s, {1, 1, 1}, 0.0f);
  std::mt19937 rng(seed);
  std::normal_distribution<float> n(1.0f, 0.3f);
  for (auto& x : v.data()) x = n(rng);
  return v;
}

const Mask3D& dilate_input() {
  static const Mask3D m = sparse_mask({64, 64, 32}, {1, 1, 2}, 0.002, 1);
  return m;
}

const Mask3D& border_input() {
  static const Mask3D m = sparse_mask({128, 128, 64}, {1, 1, 1}, 0.05, 2);
  return m;
}

const Volume3D& moments_input() {
  static const Volume3D v = noise_volume({128, 128, 64}, 3);
  return v;
}

struct ConvInput {
  kernels::ConvShape shape{16, 16, 64, 64, 3};
  std::vector<float> in, w, b, out;
  ConvInput() {
    std::mt19937 rng(4);
    std::normal_distribution<float> n(0.0f, 1.0f);
    in.resize(shape.in_channels * shape.height * shape.width);
    w.resize(shape.out_channels * shape.in_channels * 9);
    b.resize(shape.out_channels);
    out.resize(shape.out_channels * shape.height * shape.width);
    for (auto* v : {&in, &w, &b})
      for (auto& x : *v) x = n(rng);
  }
};

ConvInput& conv_input() {
  static ConvInput c;
  return c;
}

}  // namespace

static void BM_DilateSerial(benchmark::State& st) {
  for (auto _ : st) benchmark::DoNotOptimize(kernels::serial::dilate_mm(dilate_input(), 7.0));
}
static void BM_DilateParallel(benchmark::State& st) {
  for (auto _ : st) benchmark::DoNotOptimize(kernels::parallel::dilate_mm(dilate_input(), 7.0));
}
static void BM_BorderSerial(benchmark::State& st) {
  for (auto _ : st) benchmark::DoNotOptimize(kernels::serial::inplane_border(border_input()));
}
static void BM_BorderParallel(benchmark::State& st) {
  for (auto _ : st) benchmark::DoNotOptimize(kernels::parallel::inplane_border(border_input()));
}
static void BM_MomentsSerial(benchmark::State& st) {
  for (auto _ : st) benchmark::DoNotOptimize(kernels::serial::moments(moments_input(), false));
}
static void BM_MomentsParallel(benchmark::State& st) {
  for (auto _ : st) benchmark::DoNotOptimize(kernels::parallel::moments(moments_input(), false));
}
static void BM_ConvSerial(benchmark::State& st) {
  auto& c = conv_input();
  for (auto _ : st) {
    kernels::serial::conv2d_forward(c.shape, c.in, c.w, c.b, c.out);
    benchmark::DoNotOptimize(c.out.data());
  }
}
static void BM_ConvParallel(benchmark::State& st) {
  auto& c = conv_input();
  for (auto _ : st) {
    kernels::parallel::conv2d_forward(c.shape, c.in, c.w, c.b, c.out);
    benchmark::DoNotOptimize(c.out.data());
  }
}

BENCHMARK(BM_DilateSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DilateParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BorderSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BorderParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MomentsSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MomentsParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvParallel)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
