#include "cbfuse/tensor.hpp"

#include <sstream>

namespace cbfuse {

std::string TensorShape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << d << "," << h << "," << w << ")";
  return os.str();
}

Tensor::Tensor(const TensorShape& s, std::vector<float> data) : shape(s), v(std::move(data)) {
  if (v.size() != s.numel())
    throw ShapeMismatch("tensor data length " + std::to_string(v.size()) +
                        " does not match shape " + s.str());
}

Tensor Tensor::full(const TensorShape& s, float value) {
  Tensor t(s);
  std::fill(t.v.begin(), t.v.end(), value);
  return t;
}

}  // namespace cbfuse
