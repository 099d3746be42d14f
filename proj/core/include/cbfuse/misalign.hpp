#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cbfuse/volume.hpp"

namespace cbfuse {

enum class MisalignMode { AffineOnly, AffineThenElastic };

// One knob controls every parameter range: scale in [1 -/+ 0.5 a], rotation in
// [-/+ 22.5 a] degrees, translation in [0, 0.5 a] mm, elastic max displacement
// in [0, 20 a] mm. translation_scale rescales the translation draw (the range
// is metric and nearly negligible by default).
struct MisalignmentSpec {
  double alpha_a = 0.0;
  uint64_t seed = 0;
  MisalignMode mode = MisalignMode::AffineOnly;
  double translation_scale = 1.0;
};

struct AffineParams {
  Vec3 scale{1, 1, 1};
  Vec3 rotation_deg{0, 0, 0};
  Vec3 translation_mm{0, 0, 0};
  Vec3 center{0, 0, 0};  // fixed point of scale/rotation (volume center)
};

// 7x7x7 control lattice spanning the volume extent (borders included) plus
// the per-volume displacement bound d.
struct ElasticParams {
  static constexpr int kControlsPerAxis = 7;
  double max_displacement = 0.0;  // d, drawn U(0, 20 a)
  Vec3 control_origin{0, 0, 0};
  Vec3 control_spacing{1, 1, 1};
  // x-fastest over the 7^3 lattice, (dx,dy,dz) per control point, each
  // component drawn U(-d, d)
  std::vector<double> displacements;

  Vec3 control(int i, int j, int k) const {
    std::size_t base = 3 * (static_cast<std::size_t>(k) * 49 + static_cast<std::size_t>(j) * 7 + i);
    return {displacements[base], displacements[base + 1], displacements[base + 2]};
  }
};

// Draw order is pinned for reproducibility: scale x,y,z; rotation x,y,z;
// translation x,y,z.
AffineParams sample_affine(double alpha_a, uint64_t seed, double translation_scale = 1.0);

// T(translation) . T(center) . Rz Ry Rx . S . T(-center)
AffineMap affine_to_map(const AffineParams& p);

// Draw order: d, then controls x-fastest with components x,y,z.
ElasticParams sample_elastic(double alpha_a, uint64_t seed, const GridGeometry& target);

// Cubic B-spline interpolation of the control lattice at every voxel center.
// Constant controls reproduce the constant (partition of unity); border
// control values are replicated outside the lattice.
DisplacementField elastic_to_field(const ElasticParams& e, const GridGeometry& target);

// Misaligns the preoperative CT channel onto its own grid: affine resampling,
// then (in AffineThenElastic mode) a second displacement-field resampling.
// alpha_a = 0 is a bit-exact identity. The elastic stage draws from
// seed ^ kElasticSeedSalt so the two stages use unrelated streams.
Volume apply_misalignment(const Volume& ct, const MisalignmentSpec& spec);

inline constexpr uint64_t kElasticSeedSalt = 0x656c617374696331ULL;

// reproducibility record for --dump-params
std::string misalignment_params_json(const MisalignmentSpec& spec, const GridGeometry& grid);

}  // namespace cbfuse
