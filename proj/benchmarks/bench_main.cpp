#include <benchmark/benchmark.h>

#include <random>

#include "stvod/matching.hpp"
#include "stvod/pipeline.hpp"

namespace {

using namespace stvod;

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = d(rng);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  Var a = Var::constant(random_tensor({n, n}, rng)), b = Var::constant(random_tensor({n, n}, rng));
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b).value().data().data());
  state.SetItemsProcessed(state.iterations() * static_cast<long>(n * n * n));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(16, 256);

void BM_DeformableAttention(benchmark::State& state) {
  const auto frames = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  ParameterStore store;
  auto p = DeformableAttention::create(store, "attn", 64, 4, 4, frames, rng);
  std::vector<FeatureTokens> maps;
  for (std::size_t f = 0; f < frames; ++f) maps.push_back({Var::constant(random_tensor({64, 64}, rng)), 8, 8});
  Var q = Var::constant(random_tensor({64, 64}, rng));
  Var r = Var::constant(random_tensor({64, 2}, rng, 0.0, 1.0));
  for (auto _ : state) benchmark::DoNotOptimize(temporal_deformable_attention(q, r, maps, p).value().data().data());
}
BENCHMARK(BM_DeformableAttention)->Arg(1)->Arg(3)->Arg(5);

void BM_Hungarian(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(3);
  Tensor cost = random_tensor({n, n / 2}, rng, 0.0, 10.0);
  for (auto _ : state) benchmark::DoNotOptimize(hungarian(cost).pairs.data());
}
BENCHMARK(BM_Hungarian)->Arg(8)->Arg(30)->Arg(100);

// One optimizer step of each training stage at the default model size.
void BM_TrainStep(benchmark::State& state) {
  RunConfig config;
  config.data.train_clips = 1;
  config.train.spatial_epochs = state.range(0) == 0 ? 1 : 0;
  config.train.temporal_epochs = state.range(0) == 0 ? 0 : 1;
  config.train.spatial_frames = "current";
  const auto clips = generate_split(config, false);
  Model model(config.model, 0);
  TrainOptions options;
  options.stage = state.range(0) == 0 ? "spatial" : "temporal";
  for (auto _ : state) benchmark::DoNotOptimize(train(model, config, clips, options).last_loss);
  state.SetLabel(options.stage);
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Inference(benchmark::State& state) {
  RunConfig config;
  config.data.val_clips = 1;
  const auto clips = generate_split(config, true);
  Model model(config.model, 0);
  const EvalMode mode = state.range(0) == 0 ? EvalMode::spatial : EvalMode::temporal;
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(model, clips, mode).detections.size());
  state.SetLabel(mode == EvalMode::spatial ? "spatial" : "temporal");
}
BENCHMARK(BM_Inference)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
