#include <benchmark/benchmark.h>

#include "cbfuse/rng.hpp"
#include "cbfuse/train.hpp"

using namespace cbfuse;

namespace {

Tensor random_input(int channels, int side, uint64_t seed) {
  Tensor t({1, channels, side, side, side});
  Rng rng(seed);
  for (auto& v : t.v) v = static_cast<float>(rng.uniform(0.0, 1.0));
  return t;
}

void BM_UNetForward(benchmark::State& state) {
  UNetConfig cfg;
  cfg.in_channels = 2;
  UNet net(cfg, 1);
  Tensor x = random_input(2, static_cast<int>(state.range(0)), 2);
  for (auto _ : state) {
    Tensor p = net.predict(x);
    benchmark::DoNotOptimize(p.v.data());
  }
}
BENCHMARK(BM_UNetForward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  UNetConfig cfg;
  cfg.in_channels = 2;
  UNet net(cfg, 1);
  int side = static_cast<int>(state.range(0));
  Tensor x = random_input(2, side, 3);
  Tensor y({1, 2, side, side, side});
  Rng rng(4);
  for (auto& v : y.v) v = rng.unit() < 0.2 ? 1.0f : 0.0f;

  for (auto _ : state) {
    Graph g;
    int logits = net.forward(g, g.input(x), true);
    int loss = g.bce_dice_loss(logits, y, 1.0, 1.0, 1e-5);
    net.zero_grads();
    g.backward(loss);
    benchmark::DoNotOptimize(net.params()[0].grad.v.data());
  }
}
BENCHMARK(BM_TrainStep)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
