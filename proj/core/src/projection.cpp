#include "cbfuse/projection.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "cbfuse/errors.hpp"

namespace cbfuse {

using nlohmann::json;

void ConeBeamGeometry::set_uniform_angles() {
  angles.resize(n_projections);
  for (int i = 0; i < n_projections; ++i) angles[i] = 2.0 * M_PI * i / n_projections;
}

void ConeBeamGeometry::validate() const {
  if (n_projections < 1) throw BadGeometry("need at least one projection");
  if (static_cast<int>(angles.size()) != n_projections)
    throw BadGeometry("angle list length != n_projections");
  if (!(sdd > sid) || !(sid > 0.0)) throw BadGeometry("need sdd > sid > 0");
  if (nu < 2 || nv < 1) throw BadGeometry("detector must be at least 2x1 pixels");
  if (!(du > 0.0) || !(dv > 0.0)) throw BadGeometry("detector pitch must be positive");
}

Vec3 ConeBeamGeometry::source(int view) const {
  double t = angles[view];
  return {sid * std::cos(t), sid * std::sin(t), 0.0};
}

Vec3 ConeBeamGeometry::pixel_position(int view, double iu, double iv) const {
  double t = angles[view];
  Vec3 w = {std::cos(t), std::sin(t), 0.0};
  Vec3 u = {-std::sin(t), std::cos(t), 0.0};
  double uu = (iu - 0.5 * (nu - 1)) * du;
  double vv = (iv - 0.5 * (nv - 1)) * dv;
  return {-(sdd - sid) * w[0] + uu * u[0], -(sdd - sid) * w[1] + uu * u[1], vv};
}

ConeBeamGeometry make_geometry(int n_projections) {
  ConeBeamGeometry g;
  g.n_projections = n_projections;
  g.set_uniform_angles();
  g.validate();
  return g;
}

double grid_half_diagonal(const GridGeometry& grid) {
  double worst = 0.0;
  for (int corner = 0; corner < 8; ++corner) {
    Vec3 p = grid.index_to_world((corner & 1) ? grid.dims[0] - 1 : 0,
                                 (corner & 2) ? grid.dims[1] - 1 : 0,
                                 (corner & 4) ? grid.dims[2] - 1 : 0);
    worst = std::max(worst, norm(p));
  }
  return worst;
}

namespace {

// slab clip of segment src + t*(dst-src), t in [0,1], against the voxel box
bool clip_to_box(const GridGeometry& g, const Vec3& src, const Vec3& dir, double& t0, double& t1) {
  t0 = 0.0;
  t1 = 1.0;
  for (int a = 0; a < 3; ++a) {
    double lo = g.origin[a] - 0.5 * g.spacing[a];
    double hi = g.origin[a] + (g.dims[a] - 0.5) * g.spacing[a];
    if (std::abs(dir[a]) < 1e-12) {
      if (src[a] < lo || src[a] > hi) return false;
      continue;
    }
    double a0 = (lo - src[a]) / dir[a];
    double a1 = (hi - src[a]) / dir[a];
    if (a0 > a1) std::swap(a0, a1);
    t0 = std::max(t0, a0);
    t1 = std::min(t1, a1);
  }
  return t1 > t0;
}

}  // namespace

double integrate_ray(const Volume& vol, const Vec3& src, const Vec3& dst) {
  Vec3 dir = dst - src;
  double t0, t1;
  if (!clip_to_box(vol.grid, src, dir, t0, t1)) return 0.0;

  double seg_len = norm(dir) * (t1 - t0);
  double step = 0.5 * std::min({vol.grid.spacing[0], vol.grid.spacing[1], vol.grid.spacing[2]});
  int n = std::max(2, static_cast<int>(std::ceil(seg_len / step)) + 1);
  double dt = (t1 - t0) / (n - 1);
  double dl = seg_len / (n - 1);

  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    double t = t0 + i * dt;
    double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    acc += w * trilinear_sample(vol, src + t * dir);
  }
  return acc * dl;
}

ProjectionSet forward_project(const Volume& vol, const ConeBeamGeometry& geom) {
  geom.validate();
  if (grid_half_diagonal(vol.grid) >= geom.sid)
    throw BadGeometry("volume does not fit inside the scan orbit");

  ProjectionSet ps;
  ps.geom = geom;
  ps.data.assign(ps.pixels_per_view() * geom.n_projections, 0.0);

#pragma omp parallel for schedule(static)
  for (int view = 0; view < geom.n_projections; ++view) {
    Vec3 src = geom.source(view);
    for (int iv = 0; iv < geom.nv; ++iv)
      for (int iu = 0; iu < geom.nu; ++iu)
        ps.at(view, iv, iu) = integrate_ray(vol, src, geom.pixel_position(view, iu, iv));
  }
  return ps;
}

namespace {

constexpr char kMagic[4] = {'C', 'B', 'P', '1'};

}  // namespace

void store_projections(const ProjectionSet& ps, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot open for writing: " + path);
  json h = {{"n_projections", ps.geom.n_projections},
            {"sid", ps.geom.sid},
            {"sdd", ps.geom.sdd},
            {"nu", ps.geom.nu},
            {"nv", ps.geom.nv},
            {"du", ps.geom.du},
            {"dv", ps.geom.dv},
            {"angles", ps.geom.angles},
            {"dtype", "f64"}};
  std::string header = h.dump();
  uint32_t hlen = static_cast<uint32_t>(header.size());
  f.write(kMagic, 4);
  f.write(reinterpret_cast<const char*>(&hlen), 4);
  f.write(header.data(), hlen);
  f.write(reinterpret_cast<const char*>(ps.data.data()),
          static_cast<std::streamsize>(ps.data.size() * 8));
  if (!f) throw IoFailure("write failed: " + path);
}

ProjectionSet load_projections(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot open: " + path);
  char magic[4];
  uint32_t hlen = 0;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&hlen), 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw CorruptHeader("bad projection magic: " + path);
  if (hlen == 0 || hlen > (64u << 20)) throw CorruptHeader("implausible header length: " + path);
  std::string header(hlen, '\0');
  f.read(header.data(), hlen);
  if (!f) throw CorruptHeader("truncated header: " + path);

  ProjectionSet ps;
  try {
    json h = json::parse(header);
    ps.geom.n_projections = h.at("n_projections").get<int>();
    ps.geom.sid = h.at("sid").get<double>();
    ps.geom.sdd = h.at("sdd").get<double>();
    ps.geom.nu = h.at("nu").get<int>();
    ps.geom.nv = h.at("nv").get<int>();
    ps.geom.du = h.at("du").get<double>();
    ps.geom.dv = h.at("dv").get<double>();
    ps.geom.angles = h.at("angles").get<std::vector<double>>();
  } catch (const json::exception&) {
    throw CorruptHeader("unparsable projection header: " + path);
  }
  ps.geom.validate();
  ps.data.resize(ps.pixels_per_view() * ps.geom.n_projections);
  f.read(reinterpret_cast<char*>(ps.data.data()),
         static_cast<std::streamsize>(ps.data.size() * 8));
  if (!f) throw CorruptHeader("truncated projection payload: " + path);
  return ps;
}

}  // namespace cbfuse
