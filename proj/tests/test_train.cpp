#include <doctest.h>

#include <cmath>

#include "cbfuse/rng.hpp"
#include "cbfuse/train.hpp"

using namespace cbfuse;

namespace {

// small blob-segmentation task on an 8^3 grid
std::vector<TrainSample> toy_dataset(int n, uint64_t seed) {
  std::vector<TrainSample> out;
  Rng rng(seed);
  for (int s = 0; s < n; ++s) {
    Tensor x({1, 2, 8, 8, 8}), y({1, 2, 8, 8, 8});
    double cx = rng.uniform(2.5, 4.5), cy = rng.uniform(2.5, 4.5), cz = rng.uniform(2.5, 4.5);
    std::size_t idx = 0;
    for (int k = 0; k < 8; ++k)
      for (int j = 0; j < 8; ++j)
        for (int i = 0; i < 8; ++i, ++idx) {
          double r2 = (i - cx) * (i - cx) + (j - cy) * (j - cy) + (k - cz) * (k - cz);
          bool inside = r2 <= 6.5;
          bool core = r2 <= 2.0;
          x.v[idx] = static_cast<float>((inside ? 0.8 : 0.2) + rng.uniform(-0.05, 0.05));
          x.v[x.numel() / 2 + idx] = static_cast<float>((inside ? 0.75 : 0.25));
          y.v[idx] = inside ? 1.0f : 0.0f;
          y.v[y.numel() / 2 + idx] = core ? 1.0f : 0.0f;
        }
    out.push_back({std::move(x), std::move(y)});
  }
  return out;
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  UNetConfig cfg;
  cfg.in_channels = 2;
  UNet net(cfg, 7);
  std::vector<std::vector<float>> before;
  for (const auto& p : net.params()) before.push_back(p.value.v);

  auto data = toy_dataset(2, 1);
  VectorSource source(std::move(data));
  TrainConfig tc;
  tc.lr = 0.0;
  tc.epochs = 2;
  tc.batch_size = 2;
  train(net, source, tc);
  for (std::size_t i = 0; i < net.params().size(); ++i) CHECK(net.params()[i].value.v == before[i]);
}

TEST_CASE("training is reproducible for a fixed seed") {
  auto run = [](uint64_t seed) {
    UNetConfig cfg;
    cfg.in_channels = 2;
    UNet net(cfg, seed);
    auto data = toy_dataset(3, 9);
    VectorSource source(std::move(data));
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 2;
    tc.seed = seed;
    return train(net, source, tc);
  };
  TrainResult a = run(11), b = run(11);
  CHECK(a.step_loss == b.step_loss);
  CHECK(a.epoch_loss.back() == b.epoch_loss.back());
}

TEST_CASE("a short run reduces the loss on an easy task") {
  UNetConfig cfg;
  cfg.in_channels = 2;
  UNet net(cfg, 13);
  auto data = toy_dataset(1, 21);
  VectorSource source(std::move(data));
  TrainConfig tc;
  tc.epochs = 40;
  tc.batch_size = 1;
  tc.seed = 3;
  TrainResult res = train(net, source, tc);
  CHECK(res.step_loss.size() == 40);
  CHECK(res.step_loss.back() < 0.6 * res.step_loss.front());
}

TEST_CASE("non-finite targets abort with DivergedLoss") {
  UNetConfig cfg;
  cfg.in_channels = 2;
  UNet net(cfg, 17);
  auto data = toy_dataset(1, 5);
  data[0].y.v[0] = std::numeric_limits<float>::quiet_NaN();
  VectorSource source(std::move(data));
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 1;
  CHECK_THROWS_AS(train(net, source, tc), DivergedLoss);
}

TEST_CASE("an empty source is rejected") {
  UNetConfig cfg;
  UNet net(cfg, 19);
  VectorSource source({});
  TrainConfig tc;
  CHECK_THROWS_AS(train(net, source, tc), EmptyInput);
}

TEST_CASE("batch stacking validates shapes") {
  Tensor a({1, 2, 8, 8, 8}), b({1, 2, 8, 8, 8}), c({1, 1, 8, 8, 8});
  Tensor s = stack_batch({&a, &b});
  CHECK(s.shape.n == 2);
  CHECK_THROWS_AS(stack_batch({&a, &c}), ShapeMismatch);
  CHECK_THROWS_AS(stack_batch({}), EmptyInput);
}
