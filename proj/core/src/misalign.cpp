#include "cbfuse/misalign.hpp"

#include <cmath>

#include <json.hpp>

#include "cbfuse/errors.hpp"
#include "cbfuse/rng.hpp"

namespace cbfuse {

AffineParams sample_affine(double alpha_a, uint64_t seed, double translation_scale) {
  if (alpha_a < 0.0) throw Error("alpha_a must be >= 0");
  Rng rng(seed);
  AffineParams p;
  for (int a = 0; a < 3; ++a) p.scale[a] = rng.uniform(1.0 - 0.5 * alpha_a, 1.0 + 0.5 * alpha_a);
  for (int a = 0; a < 3; ++a) p.rotation_deg[a] = rng.uniform(-22.5 * alpha_a, 22.5 * alpha_a);
  for (int a = 0; a < 3; ++a)
    p.translation_mm[a] = translation_scale * rng.uniform(0.0, 0.5 * alpha_a);
  return p;
}

namespace {

std::array<double, 9> mat_mul(const std::array<double, 9>& a, const std::array<double, 9>& b) {
  std::array<double, 9> r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      r[3 * i + j] = a[3 * i] * b[j] + a[3 * i + 1] * b[3 + j] + a[3 * i + 2] * b[6 + j];
  return r;
}

std::array<double, 9> rotation_matrix(int axis, double deg) {
  double r = deg * M_PI / 180.0;
  double c = std::cos(r), s = std::sin(r);
  switch (axis) {
    case 0: return {1, 0, 0, 0, c, -s, 0, s, c};
    case 1: return {c, 0, s, 0, 1, 0, -s, 0, c};
    default: return {c, -s, 0, s, c, 0, 0, 0, 1};
  }
}

}  // namespace

AffineMap affine_to_map(const AffineParams& p) {
  for (int a = 0; a < 3; ++a)
    if (p.scale[a] <= 1e-6) throw SingularMap("scale component too small");

  std::array<double, 9> lin = {p.scale[0], 0, 0, 0, p.scale[1], 0, 0, 0, p.scale[2]};
  lin = mat_mul(rotation_matrix(0, p.rotation_deg[0]), lin);
  lin = mat_mul(rotation_matrix(1, p.rotation_deg[1]), lin);
  lin = mat_mul(rotation_matrix(2, p.rotation_deg[2]), lin);

  AffineMap m;
  m.linear = lin;
  // t + c - L c
  Vec3 lc = {lin[0] * p.center[0] + lin[1] * p.center[1] + lin[2] * p.center[2],
             lin[3] * p.center[0] + lin[4] * p.center[1] + lin[5] * p.center[2],
             lin[6] * p.center[0] + lin[7] * p.center[1] + lin[8] * p.center[2]};
  m.offset = p.translation_mm + p.center - lc;
  return m;
}

ElasticParams sample_elastic(double alpha_a, uint64_t seed, const GridGeometry& target) {
  if (alpha_a < 0.0) throw Error("alpha_a must be >= 0");
  target.validate();
  Rng rng(seed);
  ElasticParams e;
  e.max_displacement = rng.uniform(0.0, 20.0 * alpha_a);
  constexpr int n = ElasticParams::kControlsPerAxis;
  e.control_origin = target.origin;
  Vec3 extent = target.center_extent();
  e.control_spacing = {extent[0] / (n - 1), extent[1] / (n - 1), extent[2] / (n - 1)};
  e.displacements.resize(3UL * n * n * n);
  for (std::size_t i = 0; i < e.displacements.size(); ++i)
    e.displacements[i] = rng.uniform(-e.max_displacement, e.max_displacement);
  return e;
}

namespace {

// cubic B-spline basis, support |x| < 2
double bspline3(double x) {
  x = std::abs(x);
  if (x < 1.0) return (4.0 - 6.0 * x * x + 3.0 * x * x * x) / 6.0;
  if (x < 2.0) {
    double t = 2.0 - x;
    return t * t * t / 6.0;
  }
  return 0.0;
}

}  // namespace

DisplacementField elastic_to_field(const ElasticParams& e, const GridGeometry& target) {
  target.validate();
  constexpr int n = ElasticParams::kControlsPerAxis;
  if (e.displacements.size() != 3UL * n * n * n)
    throw ShapeMismatch("elastic control lattice has the wrong size");

  DisplacementField field(target);
#pragma omp parallel for schedule(static)
  for (int k = 0; k < target.dims[2]; ++k) {
    for (int j = 0; j < target.dims[1]; ++j) {
      for (int i = 0; i < target.dims[0]; ++i) {
        Vec3 p = target.index_to_world(i, j, k);
        double t[3], w[3][4];
        int base[3];
        for (int a = 0; a < 3; ++a) {
          t[a] = (p[a] - e.control_origin[a]) / e.control_spacing[a];
          base[a] = static_cast<int>(std::floor(t[a])) - 1;
          for (int o = 0; o < 4; ++o) w[a][o] = bspline3(t[a] - (base[a] + o));
        }
        Vec3 d{0, 0, 0};
        for (int oz = 0; oz < 4; ++oz) {
          int cz = std::clamp(base[2] + oz, 0, n - 1);
          for (int oy = 0; oy < 4; ++oy) {
            int cy = std::clamp(base[1] + oy, 0, n - 1);
            double wzy = w[2][oz] * w[1][oy];
            for (int ox = 0; ox < 4; ++ox) {
              int cx = std::clamp(base[0] + ox, 0, n - 1);
              double weight = wzy * w[0][ox];
              if (weight == 0.0) continue;
              Vec3 c = e.control(cx, cy, cz);
              d[0] += weight * c[0];
              d[1] += weight * c[1];
              d[2] += weight * c[2];
            }
          }
        }
        field.set(i, j, k, d);
      }
    }
  }
  return field;
}

Volume apply_misalignment(const Volume& ct, const MisalignmentSpec& spec) {
  AffineParams params = sample_affine(spec.alpha_a, spec.seed, spec.translation_scale);
  params.center = ct.grid.world_center();
  Volume out = resample_affine(ct, affine_to_map(params), ct.grid);
  if (spec.mode == MisalignMode::AffineThenElastic) {
    ElasticParams e = sample_elastic(spec.alpha_a, spec.seed ^ kElasticSeedSalt, ct.grid);
    out = resample_displacement(out, elastic_to_field(e, ct.grid), ct.grid);
  }
  return out;
}

std::string misalignment_params_json(const MisalignmentSpec& spec, const GridGeometry& grid) {
  AffineParams a = sample_affine(spec.alpha_a, spec.seed, spec.translation_scale);
  GridGeometry g = grid;
  a.center = g.world_center();
  nlohmann::json j = {
      {"alpha_a", spec.alpha_a},
      {"seed", spec.seed},
      {"mode", spec.mode == MisalignMode::AffineOnly ? "affine" : "elastic"},
      {"translation_scale", spec.translation_scale},
      {"affine",
       {{"scale", {a.scale[0], a.scale[1], a.scale[2]}},
        {"rotation_deg", {a.rotation_deg[0], a.rotation_deg[1], a.rotation_deg[2]}},
        {"translation_mm", {a.translation_mm[0], a.translation_mm[1], a.translation_mm[2]}},
        {"center", {a.center[0], a.center[1], a.center[2]}}}}};
  if (spec.mode == MisalignMode::AffineThenElastic) {
    ElasticParams e = sample_elastic(spec.alpha_a, spec.seed ^ kElasticSeedSalt, g);
    j["elastic"] = {{"max_displacement", e.max_displacement},
                    {"controls_per_axis", ElasticParams::kControlsPerAxis},
                    {"displacements", e.displacements}};
  }
  return j.dump(2);
}

}  // namespace cbfuse
