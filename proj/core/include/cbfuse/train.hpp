#pragma once

#include <cstdint>
#include <vector>

#include "cbfuse/unet.hpp"

namespace cbfuse {

struct TrainConfig {
  double lr = 0.005;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  int epochs = 40;
  int batch_size = 2;
  uint64_t seed = 0;
  double bce_weight = 1.0, dice_weight = 1.0;
};

struct TrainSample {
  Tensor x;  // (1, C, D, H, W)
  Tensor y;  // (1, out_channels, D, H, W), values in {0,1}
};

// Training data access; epoch is passed through so implementations can
// re-draw per-epoch augmentations deterministically.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual TrainSample get(std::size_t idx, int epoch) = 0;
};

class VectorSource final : public SampleSource {
 public:
  explicit VectorSource(std::vector<TrainSample> samples) : samples_(std::move(samples)) {}
  std::size_t size() const override { return samples_.size(); }
  TrainSample get(std::size_t idx, int) override { return samples_[idx]; }

 private:
  std::vector<TrainSample> samples_;
};

struct TrainResult {
  std::vector<double> step_loss;
  std::vector<double> epoch_loss;  // mean step loss per epoch
};

// Adam on bce+dice, seeded shuffling each epoch; identical histories for the
// same seed. Throws DivergedLoss when the loss stops being finite and
// EmptyInput on an empty source.
TrainResult train(UNet& model, SampleSource& data, const TrainConfig& cfg);

Tensor predict(UNet& model, const Tensor& x);

// stacks single-sample tensors along the batch axis
Tensor stack_batch(const std::vector<const Tensor*>& parts);

}  // namespace cbfuse
