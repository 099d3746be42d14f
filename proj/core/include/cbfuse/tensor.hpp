#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cbfuse/errors.hpp"

namespace cbfuse {

// Dense float32 tensor with fixed axis semantics (batch, channel, z, y, x);
// unused leading axes stay 1. Layout is x-fastest.
struct TensorShape {
  int n = 1, c = 1, d = 1, h = 1, w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * d * h * w;
  }
  std::size_t spatial() const { return static_cast<std::size_t>(d) * h * w; }
  bool operator==(const TensorShape& o) const = default;
  std::string str() const;
};

struct Tensor {
  TensorShape shape;
  std::vector<float> v;

  Tensor() = default;
  explicit Tensor(const TensorShape& s) : shape(s), v(s.numel(), 0.0f) {}
  Tensor(const TensorShape& s, std::vector<float> data);

  static Tensor zeros(const TensorShape& s) { return Tensor(s); }
  static Tensor full(const TensorShape& s, float value);

  float* ptr() { return v.data(); }
  const float* ptr() const { return v.data(); }
  std::size_t numel() const { return v.size(); }
};

}  // namespace cbfuse
