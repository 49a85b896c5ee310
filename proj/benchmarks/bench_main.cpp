#include <benchmark/benchmark.h>

#include <random>

#include "celmnav/elm.hpp"
#include "celmnav/imagery.hpp"
#include "celmnav/neural.hpp"
#include "celmnav/preprocess.hpp"

using namespace celmnav;

namespace {

Tensor3 noise_input(int side) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  Tensor3 t(side, side, 1);
  for (double& v : t.data) v = u(rng);
  return t;
}

ArchSpec spec_at(int depth) {
  ArchSpec s;
  s.depth = depth;
  return s;
}

void BM_Conv1(benchmark::State& state) {
  const ArchSpec s = spec_at(1);
  const ModelParams p = init_kernels(s, 1);
  const Tensor3 x = noise_input(128);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_same(x, p.layers[0]));
}
BENCHMARK(BM_Conv1)->Unit(benchmark::kMillisecond);

void BM_Encode(benchmark::State& state) {
  const ArchSpec s = spec_at(static_cast<int>(state.range(0)));
  const ModelParams p = init_kernels(s, 1);
  const Tensor3 x = noise_input(128);
  for (auto _ : state) benchmark::DoNotOptimize(encode(x, p, s));
}
BENCHMARK(BM_Encode)->DenseRange(1, 5)->Unit(benchmark::kMillisecond);

void BM_SolveBeta(benchmark::State& state) {
  const auto n = state.range(0), l = state.range(1);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0, 1);
  const Eigen::MatrixXd h = Eigen::MatrixXd::NullaryExpr(n, l, [&] { return g(rng); });
  const Eigen::MatrixXd t = Eigen::MatrixXd::NullaryExpr(n, 3, [&] { return g(rng); });
  for (auto _ : state) benchmark::DoNotOptimize(solve_beta(h, t, 1.0));
}
BENCHMARK(BM_SolveBeta)->Args({600, 4096})->Args({2000, 1024})->Unit(benchmark::kMillisecond);

void BM_Render(benchmark::State& state) {
  const CameraModel cam;
  const BodyModel body = body_preset("D", cam);
  const auto views = sample_cloud(1, 3);
  for (auto _ : state) benchmark::DoNotOptimize(render(body, cam, views[0], views[0].sun_w));
}
BENCHMARK(BM_Render)->Unit(benchmark::kMillisecond);

void BM_Preprocess(benchmark::State& state) {
  const CameraModel cam;
  const BodyModel body = body_preset("D", cam);
  const auto views = sample_cloud(1, 3);
  const RenderResult r = render(body, cam, views[0], views[0].sun_w);
  const LabelSet labels = labels_for(r.truth, LabelStrategy::DeltaRange);
  PipelineOptions opt;
  opt.noise = NoiseSpec{};
  for (auto _ : state) benchmark::DoNotOptimize(preprocess_image(r.image, labels, 5, opt));
}
BENCHMARK(BM_Preprocess)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
