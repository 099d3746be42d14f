#include "cbfuse/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "cbfuse/errors.hpp"
#include "cbfuse/rng.hpp"

namespace cbfuse {

namespace {

double superellipsoid(const Vec3& p, const Vec3& center, const Vec3& semi, double m) {
  double s = 0.0;
  for (int a = 0; a < 3; ++a) s += std::pow(std::abs((p[a] - center[a]) / semi[a]), m);
  return s - 1.0;
}

}  // namespace

double PhantomModel::body_implicit(const Vec3& p) const {
  return superellipsoid(p, body_center, body_semi, 2.0);
}

double PhantomModel::liver_implicit(const Vec3& p) const {
  Vec3 w = p;
  for (int a = 0; a < 3; ++a)
    w[a] += warp_amplitude[a] * std::sin(warp_frequency[a] * p[(a + 1) % 3] + warp_phase[a]);
  return superellipsoid(w, liver_center, liver_semi, liver_exponent);
}

bool PhantomModel::in_tumor(const Vec3& p) const {
  for (const auto& t : tumors) {
    Vec3 d = p - t.center;
    if (dot(d, d) <= t.radius * t.radius) return true;
  }
  return false;
}

bool PhantomModel::in_rod(const Vec3& p) const {
  for (const auto& r : rods) {
    if (std::abs(p[1] - r.center[1]) > r.half_length) continue;
    double dx = p[0] - r.center[0], dz = p[2] - r.center[2];
    if (dx * dx + dz * dz <= r.radius * r.radius) return true;
  }
  return false;
}

PhantomModel build_phantom_model(const PhantomSpec& spec) {
  for (int a = 0; a < 3; ++a)
    if (spec.dims[a] < 16) throw BadGeometry("phantom dims must be >= 16 per axis");

  GridGeometry grid = centered_grid(spec.dims, spec.spacing);
  Vec3 half = 0.5 * grid.center_extent();
  Rng rng(spec.seed);

  PhantomModel m;
  m.body_center = {0, 0, 0};
  m.body_semi = {0.92 * half[0], 0.88 * half[1], 0.97 * half[2]};

  // Liver: a warped superellipsoid off to one side of the body. The shape
  // distribution is deliberately wide (size, exponent, warp) so segmentation
  // has to read the boundary from the image rather than lean on a fixed
  // shape prior.
  m.liver_center = {(-0.22 + rng.uniform(-0.06, 0.06)) * half[0],
                    (-0.10 + rng.uniform(-0.06, 0.06)) * half[1],
                    rng.uniform(-0.06, 0.06) * half[2]};
  m.liver_semi = {0.40 * half[0] * rng.uniform(0.72, 1.28),
                  0.34 * half[1] * rng.uniform(0.72, 1.28),
                  0.38 * half[2] * rng.uniform(0.72, 1.28)};
  m.liver_exponent = rng.uniform(2.0, 3.5);
  double min_half = std::min({half[0], half[1], half[2]});
  for (int a = 0; a < 3; ++a) {
    m.warp_amplitude[a] = rng.uniform(0.05, 0.15) * min_half;
    m.warp_frequency[a] = rng.uniform(0.5, 1.4) * M_PI / min_half;
    m.warp_phase[a] = rng.uniform(0.0, 2.0 * M_PI);
  }

  int n_tumors = spec.n_tumors >= 0 ? spec.n_tumors : rng.uniform_int(1, 3);

  // quasi-uniform directions for the containment check
  std::vector<Vec3> dirs;
  const int n_dirs = 32;
  for (int i = 0; i < n_dirs; ++i) {
    double z = 1.0 - 2.0 * (i + 0.5) / n_dirs;
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    double phi = i * 2.399963229728653;  // golden angle
    dirs.push_back({r * std::cos(phi), r * std::sin(phi), z});
  }

  for (int t = 0; t < n_tumors; ++t) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      Vec3 c = {m.liver_center[0] + rng.uniform(-1.0, 1.0) * m.liver_semi[0],
                m.liver_center[1] + rng.uniform(-1.0, 1.0) * m.liver_semi[1],
                m.liver_center[2] + rng.uniform(-1.0, 1.0) * m.liver_semi[2]};
      double radius = rng.uniform(0.08, 0.20) * min_half;
      if (m.liver_implicit(c) > -0.15) continue;
      bool inside = true;
      for (const auto& d : dirs)
        if (m.liver_implicit(c + radius * d) > 0.0) {
          inside = false;
          break;
        }
      if (!inside) continue;
      bool overlaps = false;
      for (const auto& prev : m.tumors) {
        Vec3 dd = c - prev.center;
        double rr = radius + prev.radius;
        if (dot(dd, dd) < rr * rr) {
          overlaps = true;
          break;
        }
      }
      if (overlaps) continue;
      m.tumors.push_back({c, radius});
      placed = true;
    }
    if (!placed)
      throw InfeasiblePlacement("could not place tumor " + std::to_string(t + 1) + " of " +
                                std::to_string(n_tumors) + " after 1000 attempts");
  }

  // Rib-like rods set off from the liver so they stay inside the
  // liver-centered field of view, where they drive the undersampling streaks.
  // Liver and tumor intensities take priority if a warped liver reaches one.
  double rod_r = 0.12 * min_half;
  const Vec3& lc = m.liver_center;
  m.rods.push_back({{lc[0] + 0.60 * half[0], lc[1], lc[2] + 0.20 * half[2]}, rod_r,
                    0.65 * half[1]});
  m.rods.push_back({{lc[0] + 0.62 * half[0], lc[1], lc[2] - 0.32 * half[2]}, rod_r,
                    0.65 * half[1]});
  m.rods.push_back({{lc[0] - 0.60 * half[0], lc[1], lc[2] - 0.10 * half[2]}, rod_r,
                    0.65 * half[1]});
  m.rods.push_back({{lc[0] + 0.05 * half[0], lc[1], lc[2] + 0.58 * half[2]}, rod_r,
                    0.65 * half[1]});
  return m;
}

std::pair<Volume, LabelVolume> generate_phantom(const PhantomSpec& spec) {
  const IntensityBands& b = spec.bands;
  for (double v : {b.body, b.liver, b.tumor, b.bone})
    if (v < 0.0 || v > 1.0) throw Error("intensity bands must lie in [0,1]");

  PhantomModel model = build_phantom_model(spec);
  GridGeometry grid = centered_grid(spec.dims, spec.spacing);
  Volume vol = Volume::zeros(grid);
  LabelVolume labels = LabelVolume::zeros(grid);

#pragma omp parallel for schedule(static)
  for (int k = 0; k < grid.dims[2]; ++k) {
    for (int j = 0; j < grid.dims[1]; ++j) {
      for (int i = 0; i < grid.dims[0]; ++i) {
        Vec3 p = grid.index_to_world(i, j, k);
        bool body = model.body_implicit(p) <= 0.0;
        if (!body) continue;  // air stays 0 with label 0

        bool liver = model.liver_implicit(p) <= 0.0;
        bool tumor = liver && model.in_tumor(p);
        bool rod = !liver && model.in_rod(p);

        double mean = tumor ? b.tumor : liver ? b.liver : rod ? b.bone : b.body;
        double noise = (2.0 * hash_unit(spec.seed, grid.linear(i, j, k)) - 1.0) * b.jitter;
        vol.at(i, j, k) = static_cast<float>(std::clamp(mean + noise, 0.0, 1.0));
        labels.at(i, j, k) = tumor ? 2 : liver ? 1 : 0;
      }
    }
  }
  return {std::move(vol), std::move(labels)};
}

std::pair<Volume, LabelVolume> center_on_liver(const Volume& vol, const LabelVolume& labels,
                                               const Index3& fov_dims) {
  if (!vol.grid.same_lattice(labels.grid))
    throw GeometryMismatch("volume and labels disagree on the lattice");
  for (int a = 0; a < 3; ++a)
    if (fov_dims[a] <= 0) throw BadGeometry("fov dims must be positive");

  double cx = 0, cy = 0, cz = 0;
  std::size_t count = 0;
  for (int k = 0; k < labels.grid.dims[2]; ++k)
    for (int j = 0; j < labels.grid.dims[1]; ++j)
      for (int i = 0; i < labels.grid.dims[0]; ++i)
        if (labels.at(i, j, k) >= 1) {
          cx += i;
          cy += j;
          cz += k;
          ++count;
        }
  if (count == 0) throw EmptyLiver("no voxel with label >= 1");

  Index3 center = {static_cast<int>(std::floor(cx / count)),
                   static_cast<int>(std::floor(cy / count)),
                   static_cast<int>(std::floor(cz / count))};
  Index3 start = {center[0] - fov_dims[0] / 2, center[1] - fov_dims[1] / 2,
                  center[2] - fov_dims[2] / 2};

  GridGeometry out_grid = centered_grid(fov_dims, vol.grid.spacing);
  Volume out_vol = Volume::zeros(out_grid);
  LabelVolume out_lab = LabelVolume::zeros(out_grid);
  for (int k = 0; k < fov_dims[2]; ++k) {
    int sk = k + start[2];
    if (sk < 0 || sk >= vol.grid.dims[2]) continue;
    for (int j = 0; j < fov_dims[1]; ++j) {
      int sj = j + start[1];
      if (sj < 0 || sj >= vol.grid.dims[1]) continue;
      for (int i = 0; i < fov_dims[0]; ++i) {
        int si = i + start[0];
        if (si < 0 || si >= vol.grid.dims[0]) continue;
        out_vol.at(i, j, k) = vol.at(si, sj, sk);
        out_lab.at(i, j, k) = labels.at(si, sj, sk);
      }
    }
  }
  return {std::move(out_vol), std::move(out_lab)};
}

}  // namespace cbfuse
