#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cbfuse/fdk.hpp"
#include "cbfuse/misalign.hpp"
#include "cbfuse/phantom.hpp"
#include "cbfuse/tensor.hpp"

namespace cbfuse {

struct FusedProvenance {
  uint64_t phantom_seed = 0;
  int alpha_np = 0;
  double alpha_a = 0.0;
  uint64_t misalign_seed = 0;
  std::string mode;  // "baseline" | "affine" | "elastic"
};

// Training sample in the intraoperative frame: channel 0 is the CBCT, channel
// 1 (when present) the misaligned preoperative CT. Labels stay aligned to
// channel 0.
struct FusedSample {
  std::vector<Volume> channels;
  LabelVolume labels;
  FusedProvenance prov;
};

Tensor sample_to_input(const FusedSample& s);         // (1, C, D, H, W)
Tensor labels_to_target(const LabelVolume& labels);   // (1, 2, D, H, W)

struct DatasetConfig {
  int n_phantoms = 20;
  int alpha_np = 490;
  // nullopt builds single-channel CBCT-only samples; the per-sample draw uses
  // seed hash(misalign->seed, sample index)
  std::optional<MisalignmentSpec> misalign;
  Index3 phantom_dims{40, 40, 40};
  Index3 fov_dims{32, 32, 32};
  Vec3 spacing{2.0, 2.0, 2.0};
  uint64_t phantom_seed_base = 1;
  FilterKind filter = FilterKind::Ramp;
};

// phantom -> liver-centered FOV -> DRRs -> FDK CBCT, fused with the
// (optionally misaligned) CT
std::vector<FusedSample> build_dataset(const DatasetConfig& cfg);

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

// Seeded shuffle with floor allocation; the remainder goes to train
// (10 -> 7/2/1, 20 -> 14/4/2). Ratios must be non-negative and sum to 1.
SplitIndices split(std::size_t n, const std::array<double, 3>& ratios, uint64_t seed);

// on-disk sample layout: <dir>/cbct.cbv [+ ct.cbv] + labels.cbv + meta.json
void save_sample(const FusedSample& s, const std::string& dir);
FusedSample load_sample(const std::string& dir);
// loads every sample_* subdirectory of dir, sorted by name
std::vector<FusedSample> load_dataset_dir(const std::string& dir);

}  // namespace cbfuse
