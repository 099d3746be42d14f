#include <benchmark/benchmark.h>

#include "cbfuse/phantom.hpp"
#include "cbfuse/projection.hpp"

using namespace cbfuse;

namespace {

void BM_ForwardProject(benchmark::State& state) {
  PhantomSpec spec;
  spec.seed = 3;
  spec.dims = {32, 32, 32};
  auto [vol, labels] = generate_phantom(spec);
  ConeBeamGeometry geom = make_geometry(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    ProjectionSet ps = forward_project(vol, geom);
    benchmark::DoNotOptimize(ps.data.data());
  }
  state.SetItemsProcessed(state.iterations() * geom.n_projections *
                          static_cast<int64_t>(geom.nu) * geom.nv);
}
BENCHMARK(BM_ForwardProject)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_PhantomGeneration(benchmark::State& state) {
  PhantomSpec spec;
  spec.seed = 5;
  int side = static_cast<int>(state.range(0));
  spec.dims = {side, side, side};
  for (auto _ : state) {
    auto [vol, labels] = generate_phantom(spec);
    benchmark::DoNotOptimize(vol.data.data());
  }
}
BENCHMARK(BM_PhantomGeneration)->Arg(40)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
