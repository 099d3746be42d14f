#pragma once

#include <array>
#include <cstdint>
#include <cstddef>
#include <vector>

#include "cbfuse/errors.hpp"

namespace cbfuse {

using Vec3 = std::array<double, 3>;
using Index3 = std::array<int, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm(const Vec3& a);
Vec3 normalized(const Vec3& a);

// Axis-aligned voxel lattice. origin is the world position (mm) of the center
// of voxel (0,0,0); data layout is x-fastest.
struct GridGeometry {
  Index3 dims{0, 0, 0};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t linear(int i, int j, int k) const {
    return static_cast<std::size_t>(k) * dims[1] * dims[0] +
           static_cast<std::size_t>(j) * dims[0] + i;
  }
  Vec3 index_to_world(double i, double j, double k) const {
    return {origin[0] + i * spacing[0], origin[1] + j * spacing[1], origin[2] + k * spacing[2]};
  }
  Vec3 world_to_index(const Vec3& p) const {
    return {(p[0] - origin[0]) / spacing[0], (p[1] - origin[1]) / spacing[1],
            (p[2] - origin[2]) / spacing[2]};
  }
  Vec3 world_center() const {
    return index_to_world(0.5 * (dims[0] - 1), 0.5 * (dims[1] - 1), 0.5 * (dims[2] - 1));
  }
  // extent covered by voxel centers
  Vec3 center_extent() const {
    return {(dims[0] - 1) * spacing[0], (dims[1] - 1) * spacing[1], (dims[2] - 1) * spacing[2]};
  }
  bool same_lattice(const GridGeometry& o, double tol = 1e-9) const;
  void validate() const;  // throws BadGeometry on non-positive dims/spacing
};

// Grid geometry for a volume centered on the world origin; the scanner frame
// convention used across the pipeline (isocenter at (0,0,0)).
GridGeometry centered_grid(const Index3& dims, const Vec3& spacing);

// Scalar field on a grid. Values are normalized intensities; every public
// operation keeps them finite.
struct Volume {
  GridGeometry grid;
  std::vector<float> data;

  Volume() = default;
  Volume(const GridGeometry& g, std::vector<float> d);
  static Volume zeros(const GridGeometry& g);

  float at(int i, int j, int k) const { return data[grid.linear(i, j, k)]; }
  float& at(int i, int j, int k) { return data[grid.linear(i, j, k)]; }
};

// Per-voxel class labels: 0 background, 1 liver, 2 tumor. The two binary
// channels used for training are liver := label >= 1 and tumor := label == 2
// (tumor voxels count as liver tissue).
struct LabelVolume {
  GridGeometry grid;
  std::vector<uint8_t> labels;

  LabelVolume() = default;
  LabelVolume(const GridGeometry& g, std::vector<uint8_t> l);
  static LabelVolume zeros(const GridGeometry& g);

  uint8_t at(int i, int j, int k) const { return labels[grid.linear(i, j, k)]; }
  uint8_t& at(int i, int j, int k) { return labels[grid.linear(i, j, k)]; }

  std::vector<uint8_t> liver_mask() const;  // label >= 1
  std::vector<uint8_t> tumor_mask() const;  // label == 2
};

// World -> world affine map, p' = L p + t.
struct AffineMap {
  std::array<double, 9> linear{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
  Vec3 offset{0, 0, 0};

  static AffineMap identity() { return AffineMap{}; }
  Vec3 apply(const Vec3& p) const {
    return {linear[0] * p[0] + linear[1] * p[1] + linear[2] * p[2] + offset[0],
            linear[3] * p[0] + linear[4] * p[1] + linear[5] * p[2] + offset[1],
            linear[6] * p[0] + linear[7] * p[1] + linear[8] * p[2] + offset[2]};
  }
  double det() const;
  AffineMap inverse() const;  // throws SingularMap when |det| <= 1e-9
  AffineMap compose(const AffineMap& inner) const;  // this after inner
};

// Dense per-voxel displacement (mm), three components per voxel, x-fastest,
// components interleaved (dx,dy,dz).
struct DisplacementField {
  GridGeometry grid;
  std::vector<float> vec;

  DisplacementField() = default;
  explicit DisplacementField(const GridGeometry& g);
  Vec3 at(int i, int j, int k) const {
    std::size_t base = 3 * grid.linear(i, j, k);
    return {vec[base], vec[base + 1], vec[base + 2]};
  }
  void set(int i, int j, int k, const Vec3& d) {
    std::size_t base = 3 * grid.linear(i, j, k);
    vec[base] = static_cast<float>(d[0]);
    vec[base + 1] = static_cast<float>(d[1]);
    vec[base + 2] = static_cast<float>(d[2]);
  }
};

// Trilinear interpolation of the 8 surrounding voxel centers. Stencil corners
// outside the grid contribute the fill value 0, so points far outside return
// 0 and the result always lies within [min,max] of the stencil values.
// Fractional indices within 1e-6 of a voxel center snap to it, which makes
// identity and whole-voxel-shift resamplings exact copies.
double trilinear_sample(const Volume& vol, const Vec3& p);

// Output voxel at world q takes trilinear_sample(src, map^-1(q)).
Volume resample_affine(const Volume& src, const AffineMap& map, const GridGeometry& target);

// Output voxel at world q samples src at q + field(q). field must live on the
// target lattice (GeometryMismatch otherwise).
Volume resample_displacement(const Volume& src, const DisplacementField& field,
                             const GridGeometry& target);

// Nearest-neighbor label resampling; out-of-source voxels get background.
LabelVolume resample_labels_nearest(const LabelVolume& src, const AffineMap& map,
                                    const GridGeometry& target);

}  // namespace cbfuse
