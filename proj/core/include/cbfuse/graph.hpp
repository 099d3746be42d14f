#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "cbfuse/tensor.hpp"

namespace cbfuse {

// Define-by-run reverse-mode tape over dense tensors. One Graph instance
// covers one forward/backward pass; values are computed eagerly when an op is
// recorded and node order doubles as the topological order for backward.
//
// Every kernel accumulates each output element sequentially (gather form), so
// values and gradients are bit-identical for any thread count.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // leaf holding a copy of t; no gradient is tracked
  int input(Tensor t);
  // leaf aliasing external parameter storage; backward accumulates into *grad
  int param(Tensor* value, Tensor* grad);

  // kernel size is taken from w (odd, "same" zero padding, stride 1);
  // w is (Cout, Cin, k, k, k), b is (Cout)
  int conv3d(int x, int w, int b);
  // transposed conv, kernel 2 stride 2, w is (Cin, Cout, 2, 2, 2), b (Cout)
  int upconv3d(int x, int w, int b);
  // kernel 2 stride 2; spatial dims must be even; ties take the first index
  // in (z, y, x) scan order
  int maxpool3d(int x);
  int relu(int x);
  int sigmoid(int x);
  int concat_channels(int a, int b);

  // Normalizes per channel over (batch, spatial) in training mode and updates
  // the running stats (momentum), or uses the running stats in eval mode.
  // per_instance switches to per-(sample, channel) statistics in both modes
  // and leaves the running stats untouched.
  int batchnorm(int x, int gamma, int beta, std::vector<float>* running_mean,
                std::vector<float>* running_var, bool training, bool per_instance,
                double momentum, double eps);

  // scalar node: bce_w * meanBCE(sigmoid(z), t) + dice_w * (1 - softDice),
  // softDice averaged over (sample, channel) groups with the given epsilon
  int bce_dice_loss(int logits, Tensor target, double bce_w = 1.0, double dice_w = 1.0,
                    double dice_eps = 1e-5);

  const Tensor& value(int id) const;
  Tensor& grad(int id);
  // value of a 1-element node; loss nodes report their double-precision
  // accumulation rather than the float32-rounded tensor entry
  double scalar(int id) const;

  // seeds d(loss)/d(loss) = 1 and walks the tape in reverse; gradients of
  // param leaves are accumulated into their external buffers (not cleared
  // here, callers zero them between steps)
  void backward(int loss_id);
  // general vector-Jacobian product: seeds grad(node) = seed and walks back
  void backward_from(int node, Tensor seed);

 private:
  struct Node {
    Tensor val;
    Tensor* ext_val = nullptr;
    Tensor grad;
    Tensor* ext_grad = nullptr;
    double hi_val = 0.0;
    bool has_hi_val = false;
    bool needs_grad = false;
    std::function<void(Graph&)> back;
  };

  int push(Node&& n);
  Tensor& mutable_value(int id);
  bool node_needs_grad(int id) const { return nodes_[id].needs_grad; }

  std::vector<Node> nodes_;
};

}  // namespace cbfuse
