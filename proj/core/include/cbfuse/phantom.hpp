#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "cbfuse/volume.hpp"

namespace cbfuse {

// Subtle liver/body contrast keeps the segmentation non-trivial once streak
// artifacts land on top; the bone band drives those streaks.
struct IntensityBands {
  double body = 0.45;
  double liver = 0.53;
  double tumor = 0.33;
  double bone = 0.95;
  double jitter = 0.03;  // per-voxel half-width around each band mean
};

struct PhantomSpec {
  uint64_t seed = 0;
  Index3 dims{64, 64, 64};
  Vec3 spacing{2.0, 2.0, 2.0};
  int n_tumors = -1;  // -1 draws Uniform{1,2,3} from the seed
  IntensityBands bands;
};

// Analytic scene sampled from a PhantomSpec. All shapes are implicit
// functions over world coordinates, so labels can be re-derived exactly.
struct PhantomModel {
  Vec3 body_center;
  Vec3 body_semi;  // ellipsoid semi-axes (mm)

  Vec3 liver_center;
  Vec3 liver_semi;
  double liver_exponent;   // superellipsoid exponent
  Vec3 warp_amplitude;     // mm, sinusoidal warp added per axis
  Vec3 warp_frequency;     // rad/mm per axis
  Vec3 warp_phase;

  struct Tumor {
    Vec3 center;
    double radius;
  };
  std::vector<Tumor> tumors;

  struct Rod {
    Vec3 center;  // axis passes through center, along y
    double radius;
    double half_length;
  };
  std::vector<Rod> rods;

  double body_implicit(const Vec3& p) const;   // <= 0 inside
  double liver_implicit(const Vec3& p) const;  // <= 0 inside
  bool in_tumor(const Vec3& p) const;
  bool in_rod(const Vec3& p) const;
};

// Draws the analytic scene; deterministic in the spec. Throws
// InfeasiblePlacement when a tumor cannot be placed inside the liver after
// 1000 seeded attempts.
PhantomModel build_phantom_model(const PhantomSpec& spec);

// Rasterizes the drawn scene to a CT-like volume plus labels. Same seed gives
// bit-identical output; per-voxel jitter is hashed from (seed, voxel index)
// so the result does not depend on evaluation order.
std::pair<Volume, LabelVolume> generate_phantom(const PhantomSpec& spec);

// Crops to fov_dims centered (rounded toward negative) on the liver-label
// centroid; the output volume is re-centered on the world origin so it can be
// scanned directly. Throws EmptyLiver when no voxel has label >= 1.
std::pair<Volume, LabelVolume> center_on_liver(const Volume& vol, const LabelVolume& labels,
                                               const Index3& fov_dims);

}  // namespace cbfuse
