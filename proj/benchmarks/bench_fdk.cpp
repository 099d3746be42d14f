#include <benchmark/benchmark.h>

#include "cbfuse/fdk.hpp"
#include "cbfuse/phantom.hpp"
#include "cbfuse/projection.hpp"

using namespace cbfuse;

namespace {

void BM_FilterProjections(benchmark::State& state) {
  PhantomSpec spec;
  spec.seed = 3;
  spec.dims = {32, 32, 32};
  auto [vol, labels] = generate_phantom(spec);
  ProjectionSet ps = forward_project(vol, make_geometry(static_cast<int>(state.range(0))));
  for (auto _ : state) {
    ProjectionSet f = filter_projections(ps, FilterKind::Ramp);
    benchmark::DoNotOptimize(f.data.data());
  }
}
BENCHMARK(BM_FilterProjections)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_Reconstruct(benchmark::State& state) {
  PhantomSpec spec;
  spec.seed = 3;
  spec.dims = {32, 32, 32};
  auto [vol, labels] = generate_phantom(spec);
  ProjectionSet ps = forward_project(vol, make_geometry(static_cast<int>(state.range(0))));
  ReconConfig cfg;
  cfg.grid = vol.grid;
  for (auto _ : state) {
    Volume recon = reconstruct(ps, cfg);
    benchmark::DoNotOptimize(recon.data.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(vol.grid.voxel_count()) *
                          state.range(0));
}
BENCHMARK(BM_Reconstruct)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
