#include <benchmark/benchmark.h>

#include <vector>

#include "rescal/calib_math.hpp"
#include "rescal/model.hpp"
#include "rescal/ops.hpp"
#include "rescal/random.hpp"
#include "rescal/rc_layer.hpp"
#include "rescal/tensor.hpp"

using namespace rescal;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal(0.0, 1.0);
  return Tensor::create(std::move(shape), std::move(v));
}

void BM_Gclu(benchmark::State& state) {
  const auto mode = static_cast<CdfMode>(state.range(0));
  std::vector<double> xs(4096);
  Rng rng(1);
  for (double& x : xs) x = rng.normal(0.0, 2.0);
  for (auto _ : state) {
    double acc = 0;
    for (double x : xs) acc += gclu(x, mode);
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(xs.size()));
  state.SetLabel(std::string(cdf_mode_name(mode)));
}
BENCHMARK(BM_Gclu)->DenseRange(0, 2);

void BM_Conv3x3(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const std::size_t hw = 32 * 16 / c;
  const Tensor x = random_tensor({32, c, hw, hw}, 2);
  const Tensor w = random_tensor({c, c, 3, 3}, 3);
  Conv2dOptions opt;
  opt.padding = 1;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, std::nullopt, opt));
}
BENCHMARK(BM_Conv3x3)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_RcLayerForward(benchmark::State& state) {
  RcLayerConfig cfg;
  cfg.channels = static_cast<std::size_t>(state.range(0));
  cfg.mid_activation = MidActivation::sigmoid;
  const RcLayer layer(cfg);
  const std::size_t hw = 32 * 16 / cfg.channels;
  const Tensor x = random_tensor({32, cfg.channels, hw, hw}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(layer.forward(x));
}
BENCHMARK(BM_RcLayerForward)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_ModelForward(benchmark::State& state) {
  ModelSpec spec;
  spec.depth = 8;
  spec.variant = static_cast<Variant>(state.range(0));
  Model model(spec, 5);
  const Tensor images = random_tensor({32, 3, 32, 32}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(images, NormMode::eval));
  state.SetLabel(std::string(variant_name(spec.variant)));
}
BENCHMARK(BM_ModelForward)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
