#include "cbfuse/fdk.hpp"

#include <algorithm>
#include <cmath>

#include "cbfuse/errors.hpp"

namespace cbfuse {

std::vector<double> ramp_kernel(int half, double du) {
  std::vector<double> h(2 * half + 1, 0.0);
  h[half] = 1.0 / (4.0 * du * du);
  for (int k = 1; k <= half; k += 2) {
    double v = -1.0 / (M_PI * k * du) / (M_PI * k * du);
    h[half + k] = v;
    h[half - k] = v;
  }
  return h;
}

std::vector<double> ramp_hann_kernel(int half, double du) {
  std::vector<double> base = ramp_kernel(half + 1, du);
  std::vector<double> h(2 * half + 1, 0.0);
  for (int k = -half; k <= half; ++k) {
    int c = (half + 1) + k;
    h[half + k] = 0.5 * base[c] + 0.25 * (base[c - 1] + base[c + 1]);
  }
  return h;
}

ProjectionSet filter_projections(const ProjectionSet& ps, FilterKind filter) {
  ps.geom.validate();
  const ConeBeamGeometry& g = ps.geom;
  int half = g.nu - 1;  // full support of the linear convolution
  std::vector<double> kernel =
      filter == FilterKind::Ramp ? ramp_kernel(half, g.du) : ramp_hann_kernel(half, g.du);

  ProjectionSet out;
  out.geom = g;
  out.data.assign(ps.data.size(), 0.0);

#pragma omp parallel for schedule(static)
  for (int view = 0; view < g.n_projections; ++view) {
    std::vector<double> row(g.nu);
    for (int iv = 0; iv < g.nv; ++iv) {
      double v = (iv - 0.5 * (g.nv - 1)) * g.dv;
      for (int iu = 0; iu < g.nu; ++iu) {
        double u = (iu - 0.5 * (g.nu - 1)) * g.du;
        double w = g.sdd / std::sqrt(g.sdd * g.sdd + u * u + v * v);
        row[iu] = w * ps.at(view, iv, iu);
      }
      for (int iu = 0; iu < g.nu; ++iu) {
        double acc = 0.0;
        for (int j = 0; j < g.nu; ++j) acc += kernel[half + iu - j] * row[j];
        out.at(view, iv, iu) = acc;
      }
    }
  }
  return out;
}

Volume backproject(const ProjectionSet& filtered, const ReconConfig& cfg) {
  const ConeBeamGeometry& g = filtered.geom;
  g.validate();
  cfg.grid.validate();
  if (grid_half_diagonal(cfg.grid) >= g.sid)
    throw BadGeometry("reconstruction grid does not fit inside the scan orbit");

  // even-angle weighting pi/n plus the detector-sampling and magnification
  // constants of the flat-panel weighted-backprojection formula
  double scale = (M_PI / g.n_projections) * g.du * (g.sdd / g.sid);

  std::vector<double> cs(g.n_projections), sn(g.n_projections);
  for (int t = 0; t < g.n_projections; ++t) {
    cs[t] = std::cos(g.angles[t]);
    sn[t] = std::sin(g.angles[t]);
  }

  Volume out = Volume::zeros(cfg.grid);
#pragma omp parallel for schedule(static)
  for (int k = 0; k < cfg.grid.dims[2]; ++k) {
    for (int j = 0; j < cfg.grid.dims[1]; ++j) {
      for (int i = 0; i < cfg.grid.dims[0]; ++i) {
        Vec3 p = cfg.grid.index_to_world(i, j, k);
        double acc = 0.0;
        for (int t = 0; t < g.n_projections; ++t) {
          double L = g.sid - (p[0] * cs[t] + p[1] * sn[t]);
          if (L <= 1e-6) continue;
          double mag = g.sdd / L;
          double u = mag * (-p[0] * sn[t] + p[1] * cs[t]);
          double v = mag * p[2];
          double fu = u / g.du + 0.5 * (g.nu - 1);
          double fv = v / g.dv + 0.5 * (g.nv - 1);
          if (fu < 0.0 || fu > g.nu - 1 || fv < 0.0 || fv > g.nv - 1) continue;
          int iu = std::min(static_cast<int>(fu), g.nu - 2);
          int iv = std::min(static_cast<int>(fv), g.nv - 2);
          double au = fu - iu, av = fv - iv;
          double q = (1 - av) * ((1 - au) * filtered.at(t, iv, iu) + au * filtered.at(t, iv, iu + 1)) +
                     av * ((1 - au) * filtered.at(t, iv + 1, iu) + au * filtered.at(t, iv + 1, iu + 1));
          double w = g.sid / L;
          acc += w * w * q;
        }
        out.at(i, j, k) = static_cast<float>(scale * acc);
      }
    }
  }
  return out;
}

Volume reconstruct(const ProjectionSet& ps, const ReconConfig& cfg) {
  ProjectionSet filtered = filter_projections(ps, cfg.filter);
  Volume vol = backproject(filtered, cfg);
  for (auto& v : vol.data) v = std::clamp(v, 0.0f, 1.0f);
  return vol;
}

}  // namespace cbfuse
