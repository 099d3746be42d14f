#pragma once

#include <string>
#include <vector>

#include "cbfuse/volume.hpp"

namespace cbfuse {

// Circular cone-beam acquisition around the world z axis, isocenter at the
// world origin. At angle theta the source sits at sid*(cos t, sin t, 0); the
// flat detector is centered on the ray through the isocenter with in-plane
// axis u = (-sin t, cos t, 0) and axial axis v = z.
struct ConeBeamGeometry {
  int n_projections = 1;
  double sid = 600.0;  // source to isocenter (mm)
  double sdd = 1000.0; // source to detector (mm)
  int nu = 96, nv = 96;
  double du = 2.0, dv = 2.0;  // detector pitch (mm)
  std::vector<double> angles; // radians, one per projection

  void set_uniform_angles();  // n_projections angles over [0, 2pi)
  void validate() const;      // throws BadGeometry

  Vec3 source(int view) const;
  // world position of detector pixel center (iu, iv) for a view
  Vec3 pixel_position(int view, double iu, double iv) const;
};

ConeBeamGeometry make_geometry(int n_projections);

// Line-integral images, one per view, u-fastest per row. Stored in double so
// the filtering stage keeps its closed-form accuracy.
struct ProjectionSet {
  ConeBeamGeometry geom;
  std::vector<double> data;  // [view][iv][iu]

  std::size_t pixels_per_view() const { return static_cast<std::size_t>(geom.nu) * geom.nv; }
  double at(int view, int iv, int iu) const {
    return data[pixels_per_view() * view + static_cast<std::size_t>(iv) * geom.nu + iu];
  }
  double& at(int view, int iv, int iu) {
    return data[pixels_per_view() * view + static_cast<std::size_t>(iv) * geom.nu + iu];
  }
};

// max distance from the isocenter to a voxel-center corner of the grid
double grid_half_diagonal(const GridGeometry& grid);

// DRR forward projection: each detector pixel integrates the volume along its
// ray by fixed-step trilinear sampling (step = half the min voxel spacing,
// trapezoid end weights). Throws BadGeometry when the volume does not fit
// inside the scan orbit (half-diagonal >= sid).
ProjectionSet forward_project(const Volume& vol, const ConeBeamGeometry& geom);

// single-ray line integral with the same stepping rule
double integrate_ray(const Volume& vol, const Vec3& src, const Vec3& dst);

// .cbp container: magic "CBP1", u32 header length, geometry JSON, float32 data
void store_projections(const ProjectionSet& ps, const std::string& path);
ProjectionSet load_projections(const std::string& path);

}  // namespace cbfuse
