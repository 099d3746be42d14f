#include <benchmark/benchmark.h>

#include "cbfuse/misalign.hpp"
#include "cbfuse/rng.hpp"
#include "cbfuse/volume.hpp"

using namespace cbfuse;

namespace {

Volume random_volume(int side) {
  Volume v = Volume::zeros(centered_grid({side, side, side}, {2, 2, 2}));
  Rng rng(1);
  for (auto& x : v.data) x = static_cast<float>(rng.uniform(0.0, 1.0));
  return v;
}

void BM_ResampleAffine(benchmark::State& state) {
  Volume v = random_volume(static_cast<int>(state.range(0)));
  AffineParams p = sample_affine(0.5, 7);
  p.center = v.grid.world_center();
  AffineMap m = affine_to_map(p);
  for (auto _ : state) {
    Volume out = resample_affine(v, m, v.grid);
    benchmark::DoNotOptimize(out.data.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(v.grid.voxel_count()));
}
BENCHMARK(BM_ResampleAffine)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_ElasticField(benchmark::State& state) {
  GridGeometry g = centered_grid({static_cast<int>(state.range(0)), static_cast<int>(state.range(0)),
                                  static_cast<int>(state.range(0))},
                                 {2, 2, 2});
  ElasticParams e = sample_elastic(1.0, 3, g);
  for (auto _ : state) {
    DisplacementField f = elastic_to_field(e, g);
    benchmark::DoNotOptimize(f.vec.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(g.voxel_count()));
}
BENCHMARK(BM_ElasticField)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_ApplyMisalignment(benchmark::State& state) {
  Volume v = random_volume(32);
  MisalignmentSpec spec;
  spec.alpha_a = 0.5;
  spec.seed = 11;
  spec.mode = MisalignMode::AffineThenElastic;
  for (auto _ : state) {
    Volume out = apply_misalignment(v, spec);
    benchmark::DoNotOptimize(out.data.data());
  }
}
BENCHMARK(BM_ApplyMisalignment)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
