#include "cbfuse/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cbfuse/projection.hpp"
#include "cbfuse/rng.hpp"
#include "cbfuse/volume_io.hpp"

namespace cbfuse {

namespace fs = std::filesystem;
using nlohmann::json;

Tensor sample_to_input(const FusedSample& s) {
  if (s.channels.empty()) throw EmptyInput("fused sample has no channels");
  const GridGeometry& g = s.channels[0].grid;
  for (const auto& c : s.channels)
    if (!c.grid.same_lattice(g)) throw GeometryMismatch("fused channels disagree on the lattice");

  TensorShape shape{1, static_cast<int>(s.channels.size()), g.dims[2], g.dims[1], g.dims[0]};
  Tensor t(shape);
  std::size_t per = g.voxel_count();
  for (std::size_t c = 0; c < s.channels.size(); ++c)
    std::copy_n(s.channels[c].data.begin(), per, t.v.begin() + c * per);
  return t;
}

Tensor labels_to_target(const LabelVolume& labels) {
  const GridGeometry& g = labels.grid;
  TensorShape shape{1, 2, g.dims[2], g.dims[1], g.dims[0]};
  Tensor t(shape);
  std::size_t per = g.voxel_count();
  for (std::size_t i = 0; i < per; ++i) {
    t.v[i] = labels.labels[i] >= 1 ? 1.0f : 0.0f;
    t.v[per + i] = labels.labels[i] == 2 ? 1.0f : 0.0f;
  }
  return t;
}

std::vector<FusedSample> build_dataset(const DatasetConfig& cfg) {
  if (cfg.n_phantoms < 1) throw EmptyInput("need at least one phantom");
  ConeBeamGeometry geom = make_geometry(cfg.alpha_np);

  std::vector<FusedSample> samples;
  samples.reserve(cfg.n_phantoms);
  for (int i = 0; i < cfg.n_phantoms; ++i) {
    PhantomSpec pspec;
    pspec.seed = cfg.phantom_seed_base + static_cast<uint64_t>(i);
    pspec.dims = cfg.phantom_dims;
    pspec.spacing = cfg.spacing;
    auto [ct, labels] = generate_phantom(pspec);
    auto [fov_ct, fov_labels] = center_on_liver(ct, labels, cfg.fov_dims);

    ProjectionSet ps = forward_project(fov_ct, geom);
    ReconConfig rc;
    rc.grid = fov_ct.grid;
    rc.filter = cfg.filter;
    Volume cbct = reconstruct(ps, rc);

    FusedSample s;
    s.prov.phantom_seed = pspec.seed;
    s.prov.alpha_np = cfg.alpha_np;
    s.channels.push_back(std::move(cbct));
    if (cfg.misalign) {
      MisalignmentSpec ms = *cfg.misalign;
      ms.seed = hash_u64(cfg.misalign->seed, static_cast<uint64_t>(i));
      s.channels.push_back(apply_misalignment(fov_ct, ms));
      s.prov.alpha_a = ms.alpha_a;
      s.prov.misalign_seed = ms.seed;
      s.prov.mode = ms.mode == MisalignMode::AffineOnly ? "affine" : "elastic";
    } else {
      s.prov.mode = "baseline";
    }
    s.labels = std::move(fov_labels);
    samples.push_back(std::move(s));
  }
  return samples;
}

SplitIndices split(std::size_t n, const std::array<double, 3>& ratios, uint64_t seed) {
  double sum = ratios[0] + ratios[1] + ratios[2];
  for (double r : ratios)
    if (r < 0.0) throw BadRatios("split ratios must be non-negative");
  if (std::abs(sum - 1.0) > 1e-9) throw BadRatios("split ratios must sum to 1");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.unit() * i);
    std::swap(order[i - 1], order[j]);
  }

  std::size_t n_train = static_cast<std::size_t>(std::floor(ratios[0] * n));
  std::size_t n_val = static_cast<std::size_t>(std::floor(ratios[1] * n));
  std::size_t n_test = static_cast<std::size_t>(std::floor(ratios[2] * n));
  n_train += n - (n_train + n_val + n_test);  // remainder to train

  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + n_train);
  out.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  out.test.assign(order.begin() + n_train + n_val, order.end());
  return out;
}

void save_sample(const FusedSample& s, const std::string& dir) {
  fs::create_directories(dir);
  if (s.channels.empty()) throw EmptyInput("fused sample has no channels");
  store_volume(s.channels[0], dir + "/cbct.cbv");
  if (s.channels.size() > 1) store_volume(s.channels[1], dir + "/ct.cbv");
  store_labels(s.labels, dir + "/labels.cbv");
  json meta = {{"phantom_seed", s.prov.phantom_seed},
               {"alpha_np", s.prov.alpha_np},
               {"alpha_a", s.prov.alpha_a},
               {"misalign_seed", s.prov.misalign_seed},
               {"mode", s.prov.mode}};
  std::ofstream f(dir + "/meta.json");
  if (!f) throw IoFailure("cannot write " + dir + "/meta.json");
  f << meta.dump(2) << "\n";
}

FusedSample load_sample(const std::string& dir) {
  FusedSample s;
  s.channels.push_back(load_scalar_volume(dir + "/cbct.cbv"));
  if (fs::exists(dir + "/ct.cbv")) s.channels.push_back(load_scalar_volume(dir + "/ct.cbv"));
  s.labels = load_label_volume(dir + "/labels.cbv");
  std::ifstream f(dir + "/meta.json");
  if (f) {
    try {
      json meta = json::parse(f);
      s.prov.phantom_seed = meta.value("phantom_seed", 0ULL);
      s.prov.alpha_np = meta.value("alpha_np", 0);
      s.prov.alpha_a = meta.value("alpha_a", 0.0);
      s.prov.misalign_seed = meta.value("misalign_seed", 0ULL);
      s.prov.mode = meta.value("mode", std::string());
    } catch (const json::exception&) {
      throw CorruptHeader("unparsable meta.json in " + dir);
    }
  }
  return s;
}

std::vector<FusedSample> load_dataset_dir(const std::string& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && e.path().filename().string().rfind("sample_", 0) == 0)
      names.push_back(e.path().string());
  std::sort(names.begin(), names.end());
  if (names.empty()) throw EmptyInput("no sample_* directories under " + dir);
  std::vector<FusedSample> out;
  out.reserve(names.size());
  for (const auto& nme : names) out.push_back(load_sample(nme));
  return out;
}

}  // namespace cbfuse
