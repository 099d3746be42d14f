#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cbfuse/graph.hpp"

namespace cbfuse {

// Channel trajectory {32, 64, 128, 256}: three encoder double-conv blocks
// joined by 2x2x2 max pooling, one bottleneck double-conv, and a mirrored
// decoder with 2x2x2 transposed-conv upsampling and skip concatenations,
// closed by a 1x1x1 conv onto the segmentation channels. Each conv is
// followed by batch norm and ReLU.
struct UNetConfig {
  int in_channels = 2;  // CBCT + CT (1 for the unimodal baseline)
  std::array<int, 4> encoder_channels{32, 64, 128, 256};
  int out_channels = 2;  // liver, tumor
  bool instance_norm = false;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
};

class UNet {
 public:
  struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
  };
  struct Buffer {
    std::string name;
    std::vector<float> data;
  };

  UNet(const UNetConfig& cfg, uint64_t seed);

  const UNetConfig& config() const { return cfg_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  std::vector<Buffer>& buffers() { return buffers_; }
  std::size_t parameter_count() const;  // trainable scalars
  void zero_grads();

  // Records the net on g from input node x (N, in_channels, D, H, W with
  // D/H/W divisible by 8) and returns the logits node (N, out_channels, ...).
  int forward(Graph& g, int x, bool training);

  // eval-mode per-channel sigmoid probabilities
  Tensor predict(const Tensor& x);

  // checkpoint container: magic "CBM1", u32 header length, JSON manifest
  // (config + named entries), float32 blobs
  void save(const std::string& path) const;
  static UNet load(const std::string& path);

 private:
  struct ConvIds {
    int w = -1, b = -1;
  };
  struct NormIds {
    int gamma = -1, beta = -1;
    int rmean = -1, rvar = -1;  // buffer indices
  };
  struct BlockIds {
    ConvIds c1, c2;
    NormIds n1, n2;
  };

  int add_param(const std::string& name, const TensorShape& shape);
  int add_buffer(const std::string& name, std::size_t size, float fill);
  ConvIds make_conv(const std::string& name, int cout, int cin, int k, class Rng& rng);
  NormIds make_norm(const std::string& name, int channels);
  BlockIds make_block(const std::string& name, int cin, int cout, class Rng& rng);
  ConvIds make_upconv(const std::string& name, int cin, int cout, class Rng& rng);

  int apply_norm(Graph& g, const NormIds& ids, int x, bool training);
  int run_block(Graph& g, const BlockIds& blk, int x, bool training);
  int pnode(Graph& g, int param_idx);

  UNetConfig cfg_;
  std::vector<Param> params_;
  std::vector<Buffer> buffers_;
  std::array<BlockIds, 3> enc_;
  BlockIds bottleneck_;
  std::array<ConvIds, 3> up_;
  std::array<BlockIds, 3> dec_;
  ConvIds final_;
};

}  // namespace cbfuse
