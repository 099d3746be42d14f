#include "cbfuse/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cbfuse/rng.hpp"

namespace cbfuse {

Tensor stack_batch(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw EmptyInput("stack_batch on empty list");
  TensorShape s = parts[0]->shape;
  for (const Tensor* t : parts)
    if (!(t->shape == s))
      throw ShapeMismatch("batch members disagree: " + t->shape.str() + " vs " + s.str());
  TensorShape out = s;
  out.n = s.n * static_cast<int>(parts.size());
  Tensor r(out);
  std::size_t per = s.numel();
  for (std::size_t i = 0; i < parts.size(); ++i)
    std::copy_n(parts[i]->v.begin(), per, r.v.begin() + i * per);
  return r;
}

TrainResult train(UNet& model, SampleSource& data, const TrainConfig& cfg) {
  const std::size_t n = data.size();
  if (n == 0) throw EmptyInput("training set is empty");
  if (!(cfg.lr >= 0.0)) throw Error("learning rate must be >= 0");
  const int batch = std::max(1, cfg.batch_size);

  auto& params = model.params();
  std::vector<Tensor> m(params.size()), v(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = Tensor::zeros(params[i].value.shape);
    v[i] = Tensor::zeros(params[i].value.shape);
  }

  TrainResult result;
  long step = 0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with a per-epoch stream
    Rng rng(hash_u64(cfg.seed, 0xe90c + static_cast<uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(rng.unit() * i);
      std::swap(order[i - 1], order[j]);
    }

    double epoch_acc = 0.0;
    int epoch_steps = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      std::size_t stop = std::min(n, start + batch);
      std::vector<TrainSample> samples;
      samples.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) samples.push_back(data.get(order[i], epoch));
      std::vector<const Tensor*> xs, ys;
      for (const auto& s : samples) {
        xs.push_back(&s.x);
        ys.push_back(&s.y);
      }

      Graph g;
      int logits = model.forward(g, g.input(stack_batch(xs)), true);
      int loss = g.bce_dice_loss(logits, stack_batch(ys), cfg.bce_weight, cfg.dice_weight);
      double lv = g.scalar(loss);
      if (!std::isfinite(lv))
        throw DivergedLoss("loss became non-finite at step " + std::to_string(step) +
                           " (epoch " + std::to_string(epoch) + ")");

      model.zero_grads();
      g.backward(loss);

      ++step;
      double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      for (std::size_t p = 0; p < params.size(); ++p) {
        float* pv = params[p].value.ptr();
        const float* pg = params[p].grad.ptr();
        float* mp = m[p].ptr();
        float* vp = v[p].ptr();
        const std::size_t len = params[p].value.numel();
        for (std::size_t i = 0; i < len; ++i) {
          double gi = pg[i];
          double mi = cfg.beta1 * mp[i] + (1.0 - cfg.beta1) * gi;
          double vi = cfg.beta2 * vp[i] + (1.0 - cfg.beta2) * gi * gi;
          mp[i] = static_cast<float>(mi);
          vp[i] = static_cast<float>(vi);
          pv[i] = static_cast<float>(pv[i] -
                                     cfg.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.adam_eps));
        }
      }

      result.step_loss.push_back(lv);
      epoch_acc += lv;
      ++epoch_steps;
    }
    result.epoch_loss.push_back(epoch_acc / std::max(1, epoch_steps));
  }
  return result;
}

Tensor predict(UNet& model, const Tensor& x) { return model.predict(x); }

}  // namespace cbfuse
