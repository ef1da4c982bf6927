#include <benchmark/benchmark.h>

#include <random>

#include "plume/cnf.hpp"
#include "plume/geomodel.hpp"
#include "plume/obs.hpp"
#include "plume/posterior.hpp"
#include "plume/resim.hpp"

using namespace plume;

namespace {

Tensor<float> random_tensor(int c, int h, int w, std::uint64_t seed) {
  Tensor<float> t(c, h, w);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (float& v : t.v) v = n(rng);
  return t;
}

FlowConfig flow_config(int n) {
  FlowConfig cfg;
  cfg.height = n;
  cfg.width = n;
  cfg.seed = 1;
  return cfg;
}

}  // namespace

static void BM_LayeredModel(benchmark::State& state) {
  const auto grid = Grid2D::with_cells(state.range(0), state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(make_layered_model(++seed, grid, {}));
}
BENCHMARK(BM_LayeredModel)->Arg(64)->Arg(128);

static void BM_Simulate(benchmark::State& state) {
  const auto model = make_layered_model(3, Grid2D::with_cells(state.range(0), state.range(0)), {});
  LeakConfig leak;
  leak.enabled = true;
  leak.p_threshold = 0.0;
  for (auto _ : state) benchmark::DoNotOptimize(simulate(model, {}, {}, leak));
}
BENCHMARK(BM_Simulate)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_ImageTimelapse(benchmark::State& state) {
  const auto model = make_layered_model(3, Grid2D::with_cells(state.range(0), state.range(0)), {});
  Field2D s(model.grid);
  for (int k = model.seal_rows.end; k < model.grid.nz; ++k)
    for (int i = model.grid.nx / 4; i < 3 * model.grid.nx / 4; ++i) s(k, i) = 0.4;
  for (auto _ : state) benchmark::DoNotOptimize(image_timelapse(model, s, nullptr, {}, 300.0));
}
BENCHMARK(BM_ImageTimelapse)->Arg(64)->Arg(256);

static void BM_FlowForward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  FlowModel<float> model(flow_config(n));
  model.randomize(2, 0.05f);
  const auto x = random_tensor(1, n, n, 3);
  const auto cond = model.cond_pyramid(random_tensor(3, n, n, 4));
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, cond));
}
BENCHMARK(BM_FlowForward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_FlowInverse(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  FlowModel<float> model(flow_config(n));
  model.randomize(2, 0.05f);
  const auto z = random_tensor(1, n, n, 3);
  const auto cond = model.cond_pyramid(random_tensor(3, n, n, 4));
  for (auto _ : state) benchmark::DoNotOptimize(model.inverse(z.v, cond));
}
BENCHMARK(BM_FlowInverse)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_FlowNllGrad(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  FlowModel<float> model(flow_config(n));
  model.randomize(2, 0.05f);
  const auto x = random_tensor(1, n, n, 3);
  const auto cond = model.cond_pyramid(random_tensor(3, n, n, 4));
  std::vector<float> grad(model.num_params());
  for (auto _ : state) benchmark::DoNotOptimize(model.nll_grad(x, cond, grad));
}
BENCHMARK(BM_FlowNllGrad)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_Ssim(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Field2D a(n, n), b(n, n);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t c = 0; c < a.size(); ++c) {
    a[c] = u(rng);
    b[c] = 0.8 * a[c] + 0.2 * u(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(BM_Ssim)->Arg(64)->Arg(256);
BENCHMARK_MAIN();
