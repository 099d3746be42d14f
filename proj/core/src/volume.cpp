#include "cbfuse/volume.hpp"

#include <cmath>
#include <cstdlib>

namespace cbfuse {

double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

Vec3 normalized(const Vec3& a) {
  double n = norm(a);
  return {a[0] / n, a[1] / n, a[2] / n};
}

void GridGeometry::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] <= 0) throw BadGeometry("grid dims must be positive");
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
      throw BadGeometry("grid spacing must be positive and finite");
    if (!std::isfinite(origin[a])) throw BadGeometry("grid origin must be finite");
  }
}

bool GridGeometry::same_lattice(const GridGeometry& o, double tol) const {
  if (dims != o.dims) return false;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(spacing[a] - o.spacing[a]) > tol) return false;
    if (std::abs(origin[a] - o.origin[a]) > tol) return false;
  }
  return true;
}

GridGeometry centered_grid(const Index3& dims, const Vec3& spacing) {
  GridGeometry g;
  g.dims = dims;
  g.spacing = spacing;
  g.origin = {-0.5 * (dims[0] - 1) * spacing[0], -0.5 * (dims[1] - 1) * spacing[1],
              -0.5 * (dims[2] - 1) * spacing[2]};
  g.validate();
  return g;
}

Volume::Volume(const GridGeometry& g, std::vector<float> d) : grid(g), data(std::move(d)) {
  grid.validate();
  if (data.size() != grid.voxel_count())
    throw ShapeMismatch("volume data length does not match grid dims");
}

Volume Volume::zeros(const GridGeometry& g) {
  g.validate();
  return Volume(g, std::vector<float>(g.voxel_count(), 0.0f));
}

LabelVolume::LabelVolume(const GridGeometry& g, std::vector<uint8_t> l)
    : grid(g), labels(std::move(l)) {
  grid.validate();
  if (labels.size() != grid.voxel_count())
    throw ShapeMismatch("label data length does not match grid dims");
}

LabelVolume LabelVolume::zeros(const GridGeometry& g) {
  g.validate();
  return LabelVolume(g, std::vector<uint8_t>(g.voxel_count(), 0));
}

std::vector<uint8_t> LabelVolume::liver_mask() const {
  std::vector<uint8_t> m(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) m[i] = labels[i] >= 1 ? 1 : 0;
  return m;
}

std::vector<uint8_t> LabelVolume::tumor_mask() const {
  std::vector<uint8_t> m(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) m[i] = labels[i] == 2 ? 1 : 0;
  return m;
}

DisplacementField::DisplacementField(const GridGeometry& g) : grid(g) {
  grid.validate();
  vec.assign(3 * grid.voxel_count(), 0.0f);
}

double AffineMap::det() const {
  const auto& m = linear;
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

AffineMap AffineMap::inverse() const {
  double d = det();
  if (std::abs(d) <= 1e-9) throw SingularMap("affine linear part is singular");
  const auto& m = linear;
  AffineMap inv;
  double id = 1.0 / d;
  inv.linear = {(m[4] * m[8] - m[5] * m[7]) * id, (m[2] * m[7] - m[1] * m[8]) * id,
                (m[1] * m[5] - m[2] * m[4]) * id, (m[5] * m[6] - m[3] * m[8]) * id,
                (m[0] * m[8] - m[2] * m[6]) * id, (m[2] * m[3] - m[0] * m[5]) * id,
                (m[3] * m[7] - m[4] * m[6]) * id, (m[1] * m[6] - m[0] * m[7]) * id,
                (m[0] * m[4] - m[1] * m[3]) * id};
  // p = L^-1 (p' - t)
  Vec3 lt = {inv.linear[0] * offset[0] + inv.linear[1] * offset[1] + inv.linear[2] * offset[2],
             inv.linear[3] * offset[0] + inv.linear[4] * offset[1] + inv.linear[5] * offset[2],
             inv.linear[6] * offset[0] + inv.linear[7] * offset[1] + inv.linear[8] * offset[2]};
  inv.offset = {-lt[0], -lt[1], -lt[2]};
  return inv;
}

AffineMap AffineMap::compose(const AffineMap& inner) const {
  AffineMap out;
  const auto& a = linear;
  const auto& b = inner.linear;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      out.linear[3 * r + c] =
          a[3 * r] * b[c] + a[3 * r + 1] * b[3 + c] + a[3 * r + 2] * b[6 + c];
  Vec3 t = apply(inner.offset);
  out.offset = t;
  return out;
}

namespace {

constexpr double kIndexSnap = 1e-6;

inline double snap(double c) {
  double r = std::nearbyint(c);
  return std::abs(c - r) <= kIndexSnap ? r : c;
}

}  // namespace

double trilinear_sample(const Volume& vol, const Vec3& p) {
  const GridGeometry& g = vol.grid;
  double cx = snap((p[0] - g.origin[0]) / g.spacing[0]);
  double cy = snap((p[1] - g.origin[1]) / g.spacing[1]);
  double cz = snap((p[2] - g.origin[2]) / g.spacing[2]);

  if (cx <= -1.0 || cx >= g.dims[0] || cy <= -1.0 || cy >= g.dims[1] || cz <= -1.0 ||
      cz >= g.dims[2])
    return 0.0;

  int ix = static_cast<int>(std::floor(cx));
  int iy = static_cast<int>(std::floor(cy));
  int iz = static_cast<int>(std::floor(cz));
  double fx = cx - ix, fy = cy - iy, fz = cz - iz;

  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    int kz = iz + dz;
    if (kz < 0 || kz >= g.dims[2]) continue;
    double wz = dz ? fz : 1.0 - fz;
    if (wz == 0.0) continue;
    for (int dy = 0; dy < 2; ++dy) {
      int ky = iy + dy;
      if (ky < 0 || ky >= g.dims[1]) continue;
      double wy = dy ? fy : 1.0 - fy;
      if (wy == 0.0) continue;
      for (int dx = 0; dx < 2; ++dx) {
        int kx = ix + dx;
        if (kx < 0 || kx >= g.dims[0]) continue;
        double wx = dx ? fx : 1.0 - fx;
        if (wx == 0.0) continue;
        acc += wz * wy * wx * static_cast<double>(vol.at(kx, ky, kz));
      }
    }
  }
  return acc;
}

Volume resample_affine(const Volume& src, const AffineMap& map, const GridGeometry& target) {
  target.validate();
  AffineMap inv = map.inverse();
  Volume out = Volume::zeros(target);
#pragma omp parallel for schedule(static)
  for (int k = 0; k < target.dims[2]; ++k) {
    for (int j = 0; j < target.dims[1]; ++j) {
      for (int i = 0; i < target.dims[0]; ++i) {
        Vec3 q = target.index_to_world(i, j, k);
        out.at(i, j, k) = static_cast<float>(trilinear_sample(src, inv.apply(q)));
      }
    }
  }
  return out;
}

Volume resample_displacement(const Volume& src, const DisplacementField& field,
                             const GridGeometry& target) {
  target.validate();
  if (!field.grid.same_lattice(target))
    throw GeometryMismatch("displacement field lattice does not match the target grid");
  Volume out = Volume::zeros(target);
#pragma omp parallel for schedule(static)
  for (int k = 0; k < target.dims[2]; ++k) {
    for (int j = 0; j < target.dims[1]; ++j) {
      for (int i = 0; i < target.dims[0]; ++i) {
        Vec3 q = target.index_to_world(i, j, k);
        Vec3 d = field.at(i, j, k);
        out.at(i, j, k) = static_cast<float>(trilinear_sample(src, q + d));
      }
    }
  }
  return out;
}

LabelVolume resample_labels_nearest(const LabelVolume& src, const AffineMap& map,
                                    const GridGeometry& target) {
  target.validate();
  AffineMap inv = map.inverse();
  LabelVolume out = LabelVolume::zeros(target);
#pragma omp parallel for schedule(static)
  for (int k = 0; k < target.dims[2]; ++k) {
    for (int j = 0; j < target.dims[1]; ++j) {
      for (int i = 0; i < target.dims[0]; ++i) {
        Vec3 q = target.index_to_world(i, j, k);
        Vec3 c = src.grid.world_to_index(inv.apply(q));
        int ix = static_cast<int>(std::lround(c[0]));
        int iy = static_cast<int>(std::lround(c[1]));
        int iz = static_cast<int>(std::lround(c[2]));
        if (ix < 0 || ix >= src.grid.dims[0] || iy < 0 || iy >= src.grid.dims[1] || iz < 0 ||
            iz >= src.grid.dims[2])
          continue;
        out.at(i, j, k) = src.at(ix, iy, iz);
      }
    }
  }
  return out;
}

}  // namespace cbfuse
