#pragma once

#include <vector>

#include "cbfuse/projection.hpp"
#include "cbfuse/volume.hpp"

namespace cbfuse {

enum class FilterKind { Ramp, RampHann };

struct ReconConfig {
  GridGeometry grid;
  FilterKind filter = FilterKind::Ramp;
  bool short_scan = false;  // full-scan only; kept for the config surface
};

// Band-limited ramp kernel taps for detector pitch du, indices -half..half
// (tap k at result[k + half]): h[0] = 1/(4 du^2), h[k] = 0 for even k != 0,
// h[k] = -1/(pi k du)^2 for odd k.
std::vector<double> ramp_kernel(int half, double du);

// Hann-apodized variant: 0.5 h[k] + 0.25 (h[k-1] + h[k+1]).
std::vector<double> ramp_hann_kernel(int half, double du);

// Cosine-weights each pixel by sdd/sqrt(sdd^2+u^2+v^2) and convolves every
// detector row with the ramp kernel (full linear convolution, which matches
// zero padding to >= 2 nu). A centered unit impulse row maps to the kernel
// taps exactly.
ProjectionSet filter_projections(const ProjectionSet& ps, FilterKind filter);

// Voxel-driven weighted backprojection of already-filtered projections with
// bilinear detector interpolation; linear in its input. Accumulation over
// views is sequential per voxel, so the result is independent of how voxels
// are scheduled across threads.
Volume backproject(const ProjectionSet& filtered, const ReconConfig& cfg);

// filter + backproject + clamp to [0,1] (the fixed intensity window shared
// with phantom generation, so CBCT and CT channels are comparable).
Volume reconstruct(const ProjectionSet& ps, const ReconConfig& cfg);

}  // namespace cbfuse
