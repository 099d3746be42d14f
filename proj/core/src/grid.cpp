#include "cbfuse/grid.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "cbfuse/metrics.hpp"
#include "cbfuse/projection.hpp"
#include "cbfuse/report.hpp"
#include "cbfuse/rng.hpp"

namespace cbfuse {

using nlohmann::json;

GridSpec grid_spec_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(std::string("unparsable grid config: ") + e.what());
  }
  GridSpec s;
  s.alpha_np = j.value("alpha_np", s.alpha_np);
  s.alpha_a = j.value("alpha_a", s.alpha_a);
  s.run_baseline = j.value("run_baseline", s.run_baseline);
  s.run_no_misalignment = j.value("run_no_misalignment", s.run_no_misalignment);
  s.run_affine = j.value("run_affine", s.run_affine);
  s.run_elastic = j.value("run_elastic", s.run_elastic);
  s.n_phantoms = j.value("n_phantoms", s.n_phantoms);
  if (j.contains("phantom_dims")) {
    auto d = j.at("phantom_dims").get<std::vector<int>>();
    if (d.size() == 1) d = {d[0], d[0], d[0]};
    if (d.size() != 3) throw Error("phantom_dims needs 1 or 3 entries");
    s.phantom_dims = {d[0], d[1], d[2]};
  }
  if (j.contains("fov_dims")) {
    auto d = j.at("fov_dims").get<std::vector<int>>();
    if (d.size() == 1) d = {d[0], d[0], d[0]};
    if (d.size() != 3) throw Error("fov_dims needs 1 or 3 entries");
    s.fov_dims = {d[0], d[1], d[2]};
  }
  if (j.contains("spacing")) {
    auto d = j.at("spacing").get<std::vector<double>>();
    if (d.size() == 1) d = {d[0], d[0], d[0]};
    if (d.size() != 3) throw Error("spacing needs 1 or 3 entries");
    s.spacing = {d[0], d[1], d[2]};
  }
  s.rep_seeds = j.value("rep_seeds", s.rep_seeds);
  if (j.contains("split_ratios")) {
    auto r = j.at("split_ratios").get<std::vector<double>>();
    if (r.size() != 3) throw BadRatios("split_ratios needs 3 entries");
    s.split_ratios = {r[0], r[1], r[2]};
  }
  s.split_seed = j.value("split_seed", s.split_seed);
  s.phantom_seed_base = j.value("phantom_seed_base", s.phantom_seed_base);
  s.train_aug_salt = j.value("train_aug_salt", s.train_aug_salt);
  s.eval_salt = j.value("eval_salt", s.eval_salt);
  if (j.contains("train")) {
    const json& t = j.at("train");
    s.train.lr = t.value("lr", s.train.lr);
    s.train.epochs = t.value("epochs", s.train.epochs);
    s.train.batch_size = t.value("batch_size", s.train.batch_size);
    s.train.bce_weight = t.value("bce_weight", s.train.bce_weight);
    s.train.dice_weight = t.value("dice_weight", s.train.dice_weight);
  }
  return s;
}

std::string grid_spec_to_json(const GridSpec& s) {
  json j = {{"alpha_np", s.alpha_np},
            {"alpha_a", s.alpha_a},
            {"run_baseline", s.run_baseline},
            {"run_no_misalignment", s.run_no_misalignment},
            {"run_affine", s.run_affine},
            {"run_elastic", s.run_elastic},
            {"n_phantoms", s.n_phantoms},
            {"phantom_dims", {s.phantom_dims[0], s.phantom_dims[1], s.phantom_dims[2]}},
            {"fov_dims", {s.fov_dims[0], s.fov_dims[1], s.fov_dims[2]}},
            {"spacing", {s.spacing[0], s.spacing[1], s.spacing[2]}},
            {"rep_seeds", s.rep_seeds},
            {"split_ratios", {s.split_ratios[0], s.split_ratios[1], s.split_ratios[2]}},
            {"split_seed", s.split_seed},
            {"phantom_seed_base", s.phantom_seed_base},
            {"train_aug_salt", s.train_aug_salt},
            {"eval_salt", s.eval_salt},
            {"train",
             {{"lr", s.train.lr},
              {"epochs", s.train.epochs},
              {"batch_size", s.train.batch_size},
              {"bce_weight", s.train.bce_weight},
              {"dice_weight", s.train.dice_weight}}}};
  return j.dump(2);
}

double CellResult::mean_liver() const {
  double acc = 0.0;
  for (double v : liver) acc += v;
  return liver.empty() ? std::numeric_limits<double>::quiet_NaN() : acc / liver.size();
}

double CellResult::mean_tumor() const {
  double acc = 0.0;
  for (double v : tumor) acc += v;
  return tumor.empty() ? std::numeric_limits<double>::quiet_NaN() : acc / tumor.size();
}

const CellResult* GridResult::find(const std::string& mode, double alpha_a, int alpha_np) const {
  for (const auto& c : cells)
    if (c.key.mode == mode && c.key.alpha_np == alpha_np &&
        std::abs(c.key.alpha_a - alpha_a) < 1e-12)
      return &c;
  return nullptr;
}

std::vector<BaseSample> build_base_samples(const GridSpec& spec, int alpha_np) {
  DatasetConfig dc;
  dc.n_phantoms = spec.n_phantoms;
  dc.alpha_np = alpha_np;
  dc.phantom_dims = spec.phantom_dims;
  dc.fov_dims = spec.fov_dims;
  dc.spacing = spec.spacing;
  dc.phantom_seed_base = spec.phantom_seed_base;

  // build the fused dataset once without a misalignment spec, then recover
  // the aligned CT channel for per-cell misalignment
  ConeBeamGeometry geom = make_geometry(alpha_np);
  std::vector<BaseSample> base;
  base.reserve(spec.n_phantoms);
  for (int i = 0; i < spec.n_phantoms; ++i) {
    PhantomSpec pspec;
    pspec.seed = spec.phantom_seed_base + static_cast<uint64_t>(i);
    pspec.dims = spec.phantom_dims;
    pspec.spacing = spec.spacing;
    auto [ct, labels] = generate_phantom(pspec);
    auto [fov_ct, fov_labels] = center_on_liver(ct, labels, spec.fov_dims);
    ProjectionSet ps = forward_project(fov_ct, geom);
    ReconConfig rc;
    rc.grid = fov_ct.grid;
    Volume cbct = reconstruct(ps, rc);
    base.push_back(
        {std::move(cbct), std::move(fov_ct), std::move(fov_labels), pspec.seed});
  }
  return base;
}

namespace {

// training-time data: the CT channel is re-misaligned (affine only) each epoch
class CellSource final : public SampleSource {
 public:
  CellSource(const GridSpec& spec, const std::vector<BaseSample>& base,
             const std::vector<std::size_t>& indices, const CellKey& key)
      : spec_(spec), base_(base), indices_(indices), key_(key) {}

  std::size_t size() const override { return indices_.size(); }

  TrainSample get(std::size_t idx, int epoch) override {
    const BaseSample& b = base_[indices_[idx]];
    FusedSample fs;
    fs.channels.push_back(b.cbct);
    if (key_.mode != "baseline_cbct") {
      MisalignmentSpec ms;
      ms.alpha_a = key_.mode == "no_misalignment" ? 0.0 : key_.alpha_a;
      ms.mode = MisalignMode::AffineOnly;
      ms.seed = hash_u64(spec_.train_aug_salt,
                         hash_u64(b.phantom_seed, static_cast<uint64_t>(epoch)));
      fs.channels.push_back(apply_misalignment(b.ct, ms));
    }
    fs.labels = b.labels;
    return {sample_to_input(fs), labels_to_target(b.labels)};
  }

 private:
  const GridSpec& spec_;
  const std::vector<BaseSample>& base_;
  std::vector<std::size_t> indices_;
  CellKey key_;
};

Tensor eval_input(const GridSpec& spec, const BaseSample& b, const CellKey& key) {
  FusedSample fs;
  fs.channels.push_back(b.cbct);
  if (key.mode != "baseline_cbct") {
    MisalignmentSpec ms;
    ms.alpha_a = key.mode == "no_misalignment" ? 0.0 : key.alpha_a;
    ms.mode = key.mode == "elastic" ? MisalignMode::AffineThenElastic : MisalignMode::AffineOnly;
    ms.seed = hash_u64(spec.eval_salt, b.phantom_seed);
    fs.channels.push_back(apply_misalignment(b.ct, ms));
  }
  fs.labels = b.labels;
  return sample_to_input(fs);
}

}  // namespace

CellResult run_cell(const GridSpec& spec, const std::vector<BaseSample>& base,
                    const CellKey& key) {
  CellResult result;
  result.key = key;
  try {
    if (base.size() < 10) throw EmptyInput("grid needs at least 10 phantoms for the split");
    SplitIndices si = split(base.size(), spec.split_ratios, spec.split_seed);
    if (si.train.empty() || si.test.empty())
      throw EmptyInput("degenerate split for " + std::to_string(base.size()) + " phantoms");

    for (uint64_t rep_seed : spec.rep_seeds) {
      UNetConfig ucfg;
      ucfg.in_channels = key.mode == "baseline_cbct" ? 1 : 2;
      UNet model(ucfg, rep_seed);
      CellSource source(spec, base, si.train, key);
      TrainConfig tc = spec.train;
      tc.seed = rep_seed;
      train(model, source, tc);

      DiceReport rep;
      for (std::size_t idx : si.test) {
        const BaseSample& b = base[idx];
        Tensor probs = model.predict(eval_input(spec, b, key));
        std::size_t per = b.labels.grid.voxel_count();
        std::vector<float> liver_probs(probs.v.begin(), probs.v.begin() + per);
        std::vector<float> tumor_probs(probs.v.begin() + per, probs.v.begin() + 2 * per);
        rep.per_volume.push_back({dice(binarize(liver_probs), b.labels.liver_mask()),
                                  dice(binarize(tumor_probs), b.labels.tumor_mask())});
      }
      result.liver.push_back(rep.mean(0));
      result.tumor.push_back(rep.mean(1));
    }
  } catch (const std::exception& e) {
    result.ok = false;
    result.error = e.what();
    result.liver.assign(spec.rep_seeds.size(), std::numeric_limits<double>::quiet_NaN());
    result.tumor.assign(spec.rep_seeds.size(), std::numeric_limits<double>::quiet_NaN());
  }
  return result;
}

namespace {

int parallel_cells() {
  if (const char* env = std::getenv("CBFUSE_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

}  // namespace

GridResult run_grid(const GridSpec& spec, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);

  std::vector<CellKey> keys;
  for (int np : spec.alpha_np) {
    if (spec.run_baseline) keys.push_back({"baseline_cbct", 0.0, np});
    if (spec.run_no_misalignment) keys.push_back({"no_misalignment", 0.0, np});
    for (double a : spec.alpha_a) {
      if (a <= 0.0) continue;  // alignment 0 is the no-misalignment row
      if (spec.run_affine) keys.push_back({"affine", a, np});
      if (spec.run_elastic) keys.push_back({"elastic", a, np});
    }
  }

  // base data per alpha_np, shared by all cells and repetitions
  std::vector<std::vector<BaseSample>> base_per_np;
  base_per_np.reserve(spec.alpha_np.size());
  for (int np : spec.alpha_np) base_per_np.push_back(build_base_samples(spec, np));
  auto base_for = [&](int np) -> const std::vector<BaseSample>& {
    for (std::size_t i = 0; i < spec.alpha_np.size(); ++i)
      if (spec.alpha_np[i] == np) return base_per_np[i];
    throw Error("alpha_np lookup failed");
  };

  GridResult result;
  result.cells.resize(keys.size());
  std::atomic<std::size_t> next{0};
  int workers = std::min<int>(parallel_cells(), static_cast<int>(keys.size()));
  auto worker = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= keys.size()) return;
      result.cells[i] = run_cell(spec, base_for(keys[i].alpha_np), keys[i]);
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::ofstream csv(out_dir + "/results.csv");
  if (!csv) throw IoFailure("cannot write " + out_dir + "/results.csv");
  csv << results_csv(result);

  std::ofstream md(out_dir + "/summary.md");
  if (!md) throw IoFailure("cannot write " + out_dir + "/summary.md");
  auto [fusion, baseline] = split_baseline(result);
  if (!baseline.cells.empty() && !fusion.cells.empty()) {
    md << render_table(fusion, baseline).markdown;
  } else {
    md << "# Grid results\n\n";
    for (const auto& c : result.cells)
      md << "- " << c.key.mode << " alpha_a=" << c.key.alpha_a << " alpha_np=" << c.key.alpha_np
         << ": liver " << c.mean_liver() << ", tumor " << c.mean_tumor()
         << (c.ok ? "" : " [failed: " + c.error + "]") << "\n";
  }
  return result;
}

std::string results_csv(const GridResult& result) {
  std::ostringstream os;
  os << "task,mode,alpha_a,alpha_np,seed,dice\n";
  os.precision(10);
  for (const auto& c : result.cells) {
    for (std::size_t r = 0; r < c.liver.size(); ++r)
      os << "liver," << c.key.mode << "," << c.key.alpha_a << "," << c.key.alpha_np << "," << r
         << "," << c.liver[r] << "\n";
    for (std::size_t r = 0; r < c.tumor.size(); ++r)
      os << "tumor," << c.key.mode << "," << c.key.alpha_a << "," << c.key.alpha_np << "," << r
         << "," << c.tumor[r] << "\n";
  }
  return os.str();
}

GridResult parse_results_csv(const std::string& csv_text) {
  GridResult result;
  std::istringstream is(csv_text);
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("task,", 0) == 0) continue;  // header
    }
    std::istringstream ls(line);
    std::string task, mode, alpha_a_s, alpha_np_s, seed_s, dice_s;
    if (!std::getline(ls, task, ',') || !std::getline(ls, mode, ',') ||
        !std::getline(ls, alpha_a_s, ',') || !std::getline(ls, alpha_np_s, ',') ||
        !std::getline(ls, seed_s, ',') || !std::getline(ls, dice_s, ','))
      throw ColumnMismatch("bad results row: " + line);
    double alpha_a = std::stod(alpha_a_s);
    int alpha_np = std::stoi(alpha_np_s);
    double d = std::stod(dice_s);

    CellResult* cell = nullptr;
    for (auto& c : result.cells)
      if (c.key.mode == mode && c.key.alpha_np == alpha_np &&
          std::abs(c.key.alpha_a - alpha_a) < 1e-12)
        cell = &c;
    if (!cell) {
      result.cells.push_back({});
      cell = &result.cells.back();
      cell->key = {mode, alpha_a, alpha_np};
    }
    if (task == "liver")
      cell->liver.push_back(d);
    else if (task == "tumor")
      cell->tumor.push_back(d);
    else
      throw ColumnMismatch("unknown task '" + task + "' in results row");
  }
  return result;
}

std::pair<GridResult, GridResult> split_baseline(const GridResult& combined) {
  GridResult fusion, baseline;
  for (const auto& c : combined.cells)
    (c.key.mode == "baseline_cbct" ? baseline : fusion).cells.push_back(c);
  return {fusion, baseline};
}

}  // namespace cbfuse
