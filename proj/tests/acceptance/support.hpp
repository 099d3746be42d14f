#pragma once

// shared helpers for the acceptance criteria: fd gradient harness, analytic
// test phantoms and masked error metrics

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cbfuse/fdk.hpp"
#include "cbfuse/graph.hpp"
#include "cbfuse/rng.hpp"
#include "cbfuse/volume.hpp"

namespace acceptance {

using namespace cbfuse;

using OpBuilder = std::function<int(Graph&, const std::vector<int>&)>;

inline Tensor random_tensor(const TensorShape& s, uint64_t seed, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(s);
  Rng rng(seed);
  for (auto& v : t.v) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

inline double probe_loss(const std::vector<Tensor>& inputs, const OpBuilder& build,
                         const std::vector<double>& w) {
  Graph g;
  std::vector<int> ids;
  for (const Tensor& t : inputs) ids.push_back(g.input(t));
  int out = build(g, ids);
  const Tensor& y = g.value(out);
  double acc = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) acc += w[i] * static_cast<double>(y.v[i]);
  return acc;
}

// central differences (h per argument) against reverse-mode gradients; the
// relative error floors at 5% of the gradient scale so float32 forward noise
// on near-zero entries does not dominate
inline double fd_max_rel_error(std::vector<Tensor> inputs, const OpBuilder& build,
                               uint64_t wseed, double h = 1e-3) {
  std::vector<Tensor> grads;
  std::vector<double> w;
  {
    Graph g;
    std::vector<Tensor> grad_bufs;
    grad_bufs.reserve(inputs.size());
    for (Tensor& t : inputs) grad_bufs.emplace_back(Tensor::zeros(t.shape));
    std::vector<int> ids;
    for (std::size_t i = 0; i < inputs.size(); ++i)
      ids.push_back(g.param(&inputs[i], &grad_bufs[i]));
    int out = build(g, ids);
    const Tensor& y = g.value(out);
    Rng rng(wseed);
    Tensor seed(y.shape);
    w.resize(y.numel());
    for (std::size_t i = 0; i < y.numel(); ++i) {
      w[i] = rng.uniform(-1.0, 1.0);
      seed.v[i] = static_cast<float>(w[i]);
    }
    g.backward_from(out, std::move(seed));
    grads = std::move(grad_bufs);
  }

  double worst = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    double gmax = 0.0;
    for (float gv : grads[t].v) gmax = std::max(gmax, std::abs(static_cast<double>(gv)));
    const double tau = 0.05 * gmax + 1e-10;
    for (std::size_t i = 0; i < inputs[t].numel(); ++i) {
      float saved = inputs[t].v[i];
      inputs[t].v[i] = static_cast<float>(saved + h);
      double lp = probe_loss(inputs, build, w);
      inputs[t].v[i] = static_cast<float>(saved - h);
      double lm = probe_loss(inputs, build, w);
      inputs[t].v[i] = saved;
      double fd = (lp - lm) / (2.0 * h);
      double an = grads[t].v[i];
      if (std::abs(an) < 1e-3 && std::abs(fd) < 1e-3) continue;  // both agree on ~zero
      worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), tau}));
    }
  }
  return worst;
}

inline Volume sphere_volume(Index3 dims, Vec3 spacing, double radius, float value) {
  GridGeometry g = centered_grid(dims, spacing);
  Volume v = Volume::zeros(g);
  for (int k = 0; k < dims[2]; ++k)
    for (int j = 0; j < dims[1]; ++j)
      for (int i = 0; i < dims[0]; ++i) {
        Vec3 p = g.index_to_world(i, j, k);
        if (dot(p, p) <= radius * radius) v.at(i, j, k) = value;
      }
  return v;
}

// sphere plus two high-intensity rods, the streak-provoking ladder phantom
inline Volume sphere_rods_volume(Index3 dims, Vec3 spacing) {
  GridGeometry g = centered_grid(dims, spacing);
  Volume v = Volume::zeros(g);
  const double r_sphere = 0.55 * 0.5 * (dims[0] - 1) * spacing[0];
  const double r_rod = 0.06 * 0.5 * (dims[0] - 1) * spacing[0];
  const double rod_x = 0.75 * 0.5 * (dims[0] - 1) * spacing[0];
  for (int k = 0; k < dims[2]; ++k)
    for (int j = 0; j < dims[1]; ++j)
      for (int i = 0; i < dims[0]; ++i) {
        Vec3 p = g.index_to_world(i, j, k);
        if (dot(p, p) <= r_sphere * r_sphere) v.at(i, j, k) = 0.6f;
        for (double sx : {-1.0, 1.0}) {
          double dx = p[0] - sx * rod_x, dz = p[2];
          if (dx * dx + dz * dz <= r_rod * r_rod) v.at(i, j, k) = 1.0f;
        }
      }
  return v;
}

inline double masked_rmse(const Volume& recon, const Volume& truth, double mask_radius,
                          double mask_half_height) {
  double acc = 0.0;
  std::size_t n = 0;
  const GridGeometry& g = recon.grid;
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        Vec3 p = g.index_to_world(i, j, k);
        if (p[0] * p[0] + p[1] * p[1] > mask_radius * mask_radius) continue;
        if (std::abs(p[2]) > mask_half_height) continue;
        double d = static_cast<double>(recon.at(i, j, k)) - truth.at(i, j, k);
        acc += d * d;
        ++n;
      }
  return std::sqrt(acc / static_cast<double>(n));
}

}  // namespace acceptance
