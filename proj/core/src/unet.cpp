#include "cbfuse/unet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "cbfuse/errors.hpp"
#include "cbfuse/rng.hpp"

namespace cbfuse {

using nlohmann::json;

int UNet::add_param(const std::string& name, const TensorShape& shape) {
  params_.push_back({name, Tensor(shape), Tensor(shape)});
  return static_cast<int>(params_.size()) - 1;
}

int UNet::add_buffer(const std::string& name, std::size_t size, float fill) {
  buffers_.push_back({name, std::vector<float>(size, fill)});
  return static_cast<int>(buffers_.size()) - 1;
}

UNet::ConvIds UNet::make_conv(const std::string& name, int cout, int cin, int k, Rng& rng) {
  ConvIds ids;
  ids.w = add_param(name + ".weight", TensorShape{cout, cin, k, k, k});
  ids.b = add_param(name + ".bias", TensorShape{cout, 1, 1, 1, 1});
  double limit = std::sqrt(6.0 / (static_cast<double>(cin) * k * k * k));
  for (auto& v : params_[ids.w].value.v) v = static_cast<float>(rng.uniform(-limit, limit));
  return ids;
}

UNet::ConvIds UNet::make_upconv(const std::string& name, int cin, int cout, Rng& rng) {
  ConvIds ids;
  ids.w = add_param(name + ".weight", TensorShape{cin, cout, 2, 2, 2});
  ids.b = add_param(name + ".bias", TensorShape{cout, 1, 1, 1, 1});
  // stride-2 kernel-2 transposed conv: each output sees one tap per input channel
  double limit = std::sqrt(6.0 / static_cast<double>(cin));
  for (auto& v : params_[ids.w].value.v) v = static_cast<float>(rng.uniform(-limit, limit));
  return ids;
}

UNet::NormIds UNet::make_norm(const std::string& name, int channels) {
  NormIds ids;
  ids.gamma = add_param(name + ".gamma", TensorShape{channels, 1, 1, 1, 1});
  ids.beta = add_param(name + ".beta", TensorShape{channels, 1, 1, 1, 1});
  std::fill(params_[ids.gamma].value.v.begin(), params_[ids.gamma].value.v.end(), 1.0f);
  ids.rmean = add_buffer(name + ".running_mean", channels, 0.0f);
  ids.rvar = add_buffer(name + ".running_var", channels, 1.0f);
  return ids;
}

UNet::BlockIds UNet::make_block(const std::string& name, int cin, int cout, Rng& rng) {
  BlockIds blk;
  blk.c1 = make_conv(name + ".conv1", cout, cin, 3, rng);
  blk.n1 = make_norm(name + ".norm1", cout);
  blk.c2 = make_conv(name + ".conv2", cout, cout, 3, rng);
  blk.n2 = make_norm(name + ".norm2", cout);
  return blk;
}

UNet::UNet(const UNetConfig& cfg, uint64_t seed) : cfg_(cfg) {
  Rng rng(splitmix64(seed ^ 0x756e6574ULL));
  const auto& ch = cfg_.encoder_channels;

  enc_[0] = make_block("enc1", cfg_.in_channels, ch[0], rng);
  enc_[1] = make_block("enc2", ch[0], ch[1], rng);
  enc_[2] = make_block("enc3", ch[1], ch[2], rng);
  bottleneck_ = make_block("bottleneck", ch[2], ch[3], rng);
  up_[0] = make_upconv("up3", ch[3], ch[2], rng);
  dec_[0] = make_block("dec3", 2 * ch[2], ch[2], rng);
  up_[1] = make_upconv("up2", ch[2], ch[1], rng);
  dec_[1] = make_block("dec2", 2 * ch[1], ch[1], rng);
  up_[2] = make_upconv("up1", ch[1], ch[0], rng);
  dec_[2] = make_block("dec1", 2 * ch[0], ch[0], rng);
  final_ = make_conv("head", cfg_.out_channels, ch[0], 1, rng);
}

std::size_t UNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void UNet::zero_grads() {
  for (auto& p : params_) std::fill(p.grad.v.begin(), p.grad.v.end(), 0.0f);
}

int UNet::pnode(Graph& g, int param_idx) {
  Param& p = params_[param_idx];
  return g.param(&p.value, &p.grad);
}

int UNet::apply_norm(Graph& g, const NormIds& ids, int x, bool training) {
  return g.batchnorm(x, pnode(g, ids.gamma), pnode(g, ids.beta), &buffers_[ids.rmean].data,
                     &buffers_[ids.rvar].data, training, cfg_.instance_norm, cfg_.bn_momentum,
                     cfg_.bn_eps);
}

int UNet::run_block(Graph& g, const BlockIds& blk, int x, bool training) {
  int h = g.conv3d(x, pnode(g, blk.c1.w), pnode(g, blk.c1.b));
  h = g.relu(apply_norm(g, blk.n1, h, training));
  h = g.conv3d(h, pnode(g, blk.c2.w), pnode(g, blk.c2.b));
  return g.relu(apply_norm(g, blk.n2, h, training));
}

int UNet::forward(Graph& g, int x, bool training) {
  const TensorShape& s = g.value(x).shape;
  if (s.c != cfg_.in_channels)
    throw ShapeMismatch("expected " + std::to_string(cfg_.in_channels) + " input channels, got " +
                        s.str());
  if (s.d % 8 || s.h % 8 || s.w % 8)
    throw ShapeMismatch("spatial dims must be divisible by 8, got " + s.str());

  int e1 = run_block(g, enc_[0], x, training);
  int e2 = run_block(g, enc_[1], g.maxpool3d(e1), training);
  int e3 = run_block(g, enc_[2], g.maxpool3d(e2), training);
  int bt = run_block(g, bottleneck_, g.maxpool3d(e3), training);

  int d3 = g.upconv3d(bt, pnode(g, up_[0].w), pnode(g, up_[0].b));
  d3 = run_block(g, dec_[0], g.concat_channels(d3, e3), training);
  int d2 = g.upconv3d(d3, pnode(g, up_[1].w), pnode(g, up_[1].b));
  d2 = run_block(g, dec_[1], g.concat_channels(d2, e2), training);
  int d1 = g.upconv3d(d2, pnode(g, up_[2].w), pnode(g, up_[2].b));
  d1 = run_block(g, dec_[2], g.concat_channels(d1, e1), training);

  return g.conv3d(d1, pnode(g, final_.w), pnode(g, final_.b));
}

Tensor UNet::predict(const Tensor& x) {
  Graph g;
  int logits = forward(g, g.input(x), false);
  return g.value(g.sigmoid(logits));
}

namespace {
constexpr char kMagic[4] = {'C', 'B', 'M', '1'};
}

void UNet::save(const std::string& path) const {
  json manifest;
  manifest["config"] = {{"in_channels", cfg_.in_channels},
                        {"encoder_channels", cfg_.encoder_channels},
                        {"out_channels", cfg_.out_channels},
                        {"instance_norm", cfg_.instance_norm},
                        {"bn_momentum", cfg_.bn_momentum},
                        {"bn_eps", cfg_.bn_eps}};
  std::size_t offset = 0;
  json jp = json::array(), jb = json::array();
  for (const auto& p : params_) {
    jp.push_back({{"name", p.name},
                  {"shape", {p.value.shape.n, p.value.shape.c, p.value.shape.d, p.value.shape.h,
                             p.value.shape.w}},
                  {"offset", offset}});
    offset += p.value.numel();
  }
  for (const auto& b : buffers_) {
    jb.push_back({{"name", b.name}, {"size", b.data.size()}, {"offset", offset}});
    offset += b.data.size();
  }
  manifest["params"] = jp;
  manifest["buffers"] = jb;

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot open for writing: " + path);
  std::string header = manifest.dump();
  uint32_t hlen = static_cast<uint32_t>(header.size());
  f.write(kMagic, 4);
  f.write(reinterpret_cast<const char*>(&hlen), 4);
  f.write(header.data(), hlen);
  for (const auto& p : params_)
    f.write(reinterpret_cast<const char*>(p.value.ptr()),
            static_cast<std::streamsize>(p.value.numel() * 4));
  for (const auto& b : buffers_)
    f.write(reinterpret_cast<const char*>(b.data.data()),
            static_cast<std::streamsize>(b.data.size() * 4));
  if (!f) throw IoFailure("write failed: " + path);
}

UNet UNet::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot open: " + path);
  char magic[4];
  uint32_t hlen = 0;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&hlen), 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw CorruptHeader("bad checkpoint magic: " + path);
  if (hlen == 0 || hlen > (16u << 20)) throw CorruptHeader("implausible header length: " + path);
  std::string header(hlen, '\0');
  f.read(header.data(), hlen);
  if (!f) throw CorruptHeader("truncated checkpoint header: " + path);

  json manifest;
  try {
    manifest = json::parse(header);
  } catch (const json::exception&) {
    throw CorruptHeader("unparsable checkpoint header: " + path);
  }

  UNetConfig cfg;
  try {
    const json& jc = manifest.at("config");
    cfg.in_channels = jc.at("in_channels").get<int>();
    auto ch = jc.at("encoder_channels").get<std::vector<int>>();
    if (ch.size() != 4) throw CorruptHeader("bad encoder channel list: " + path);
    std::copy(ch.begin(), ch.end(), cfg.encoder_channels.begin());
    cfg.out_channels = jc.at("out_channels").get<int>();
    cfg.instance_norm = jc.at("instance_norm").get<bool>();
    cfg.bn_momentum = jc.at("bn_momentum").get<double>();
    cfg.bn_eps = jc.at("bn_eps").get<double>();
  } catch (const json::exception&) {
    throw CorruptHeader("incomplete checkpoint config: " + path);
  }

  UNet net(cfg, 0);
  const json& jp = manifest.at("params");
  if (jp.size() != net.params_.size()) throw CorruptHeader("parameter list mismatch: " + path);
  for (std::size_t i = 0; i < net.params_.size(); ++i) {
    if (jp[i].at("name").get<std::string>() != net.params_[i].name)
      throw CorruptHeader("parameter name mismatch: " + path);
    f.read(reinterpret_cast<char*>(net.params_[i].value.ptr()),
           static_cast<std::streamsize>(net.params_[i].value.numel() * 4));
  }
  const json& jb = manifest.at("buffers");
  if (jb.size() != net.buffers_.size()) throw CorruptHeader("buffer list mismatch: " + path);
  for (std::size_t i = 0; i < net.buffers_.size(); ++i) {
    if (jb[i].at("name").get<std::string>() != net.buffers_[i].name)
      throw CorruptHeader("buffer name mismatch: " + path);
    f.read(reinterpret_cast<char*>(net.buffers_[i].data.data()),
           static_cast<std::streamsize>(net.buffers_[i].data.size() * 4));
  }
  if (!f) throw CorruptHeader("truncated checkpoint payload: " + path);
  return net;
}

}  // namespace cbfuse
