#pragma once

#include <string>
#include <vector>

#include "cbfuse/dataset.hpp"
#include "cbfuse/train.hpp"

namespace cbfuse {

// Full experiment grid: CBCT quality (alpha_np) crossed with alignment
// (alpha_a) and misalignment mode, repeated over fixed seeds. Splits,
// phantom seeds, per-epoch augmentation draws and per-sample evaluation
// draws are shared across every cell so cells differ only in what the spec
// of the cell says.
struct GridSpec {
  std::vector<int> alpha_np{32, 128, 490};
  // alpha_a values for the affine/elastic rows; 0 is covered by the
  // no-misalignment row and is skipped here
  std::vector<double> alpha_a{0.25, 1.0};
  bool run_baseline = true;         // unimodal CBCT rows
  bool run_no_misalignment = true;  // perfectly aligned CT rows
  bool run_affine = true;
  bool run_elastic = true;

  int n_phantoms = 20;
  Index3 phantom_dims{40, 40, 40};
  Index3 fov_dims{32, 32, 32};
  Vec3 spacing{2.0, 2.0, 2.0};

  std::vector<uint64_t> rep_seeds{1, 2, 3, 4};
  std::array<double, 3> split_ratios{0.7, 0.2, 0.1};
  uint64_t split_seed = 2024;
  uint64_t phantom_seed_base = 1;
  uint64_t train_aug_salt = 0x7aa5;
  uint64_t eval_salt = 0xe7a1;

  TrainConfig train;
};

GridSpec grid_spec_from_json(const std::string& json_text);
std::string grid_spec_to_json(const GridSpec& spec);

struct CellKey {
  std::string mode;  // baseline_cbct | no_misalignment | affine | elastic
  double alpha_a = 0.0;
  int alpha_np = 0;
};

struct CellResult {
  CellKey key;
  std::vector<double> liver, tumor;  // one entry per repetition seed
  bool ok = true;
  std::string error;

  double mean_liver() const;
  double mean_tumor() const;
};

struct GridResult {
  std::vector<CellResult> cells;

  const CellResult* find(const std::string& mode, double alpha_a, int alpha_np) const;
};

// intraoperative CBCT + aligned CT + labels on the FOV grid, reused by every
// cell that shares the alpha_np
struct BaseSample {
  Volume cbct, ct;
  LabelVolume labels;
  uint64_t phantom_seed = 0;
};

std::vector<BaseSample> build_base_samples(const GridSpec& spec, int alpha_np);

// trains spec.rep_seeds.size() models on affine-augmented data and evaluates
// the cell's mode on the test split; exceptions are reported, not thrown
CellResult run_cell(const GridSpec& spec, const std::vector<BaseSample>& base,
                    const CellKey& key);

// runs every cell (CBFUSE_THREADS caps how many run concurrently) and writes
// results.csv plus summary.md under out_dir
GridResult run_grid(const GridSpec& spec, const std::string& out_dir);

// results.csv round-trip (columns: task, mode, alpha_a, alpha_np, seed, dice)
std::string results_csv(const GridResult& result);
GridResult parse_results_csv(const std::string& csv_text);

// splits a combined result into (fusion rows, baseline rows)
std::pair<GridResult, GridResult> split_baseline(const GridResult& combined);

}  // namespace cbfuse
