#include <benchmark/benchmark.h>

#include "sctc/rng.hpp"
#include "sctc/simgen.hpp"
#include "sctc/spatial.hpp"
#include "sctc/spgd.hpp"
#include "sctc/tensor.hpp"

namespace {

sctc::Tensor3 random_tensor(sctc::Index n, sctc::Index l, sctc::Index o, std::uint64_t seed) {
  sctc::Rng rng(seed);
  sctc::Tensor3 t(n, l, o);
  for (sctc::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
  return t;
}

void BM_mode_product(benchmark::State& state) {
  const sctc::Index n = state.range(0);
  sctc::Tensor3 t = random_tensor(n, 4, 10, 1);
  sctc::Matrix m(8, n);
  sctc::Rng rng(2);
  for (sctc::Index i = 0; i < m.size(); ++i) m(i % 8, i / 8) = rng.normal();
  for (auto _ : state) {
    sctc::Tensor3 out = sctc::mode_product(t, m, 1);
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * t.size());
}
BENCHMARK(BM_mode_product)->Arg(400)->Arg(2000)->Arg(5495);

void BM_hosvd(benchmark::State& state) {
  const sctc::Index n = state.range(0);
  sctc::Tensor3 t = random_tensor(n, 4, 10, 3);
  for (auto _ : state) {
    sctc::TuckerFactors f = sctc::hosvd(t, {3, 2, 2});
    benchmark::DoNotOptimize(f.core.data().data());
  }
}
BENCHMARK(BM_hosvd)->Arg(400)->Arg(2000);

void BM_grid_eigenbasis(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  sctc::SpatialGraph g = sctc::grid_graph(side, side);
  for (auto _ : state) {
    sctc::SpectralBasis b = sctc::spectral_basis(g);
    benchmark::DoNotOptimize(b.eigenvectors.data());
  }
}
BENCHMARK(BM_grid_eigenbasis)->Arg(10)->Arg(20)->Arg(30)->Unit(benchmark::kMillisecond);

void BM_spgd_fit(benchmark::State& state) {
  sctc::ScenarioConfig sc;
  sc.rows = 10;
  sc.cols = static_cast<int>(state.range(0)) / 10;
  sc.seed = 9;
  sctc::SyntheticDataset data = sctc::generate(sc);
  sctc::SpectralBasis basis = sctc::spectral_basis(data.graph);
  sctc::Tensor3 mask = sctc::assignment_mask(data.design, data.y_obs.n_outcomes());
  sctc::Matrix z1(data.z.rows(), data.z.cols() + 1);
  z1.col(0).setOnes();
  z1.rightCols(data.z.cols()) = data.z;
  sctc::FitConfig cfg;
  cfg.ranks = sc.ranks;
  cfg.select = false;
  cfg.fixed_eigs = {1, 2, 3, 4, 5};
  for (auto _ : state) {
    sctc::SpatialTuckerModel m = sctc::spgd_fit(data.y_obs, mask, z1, basis, nullptr, cfg);
    benchmark::DoNotOptimize(m.report.final_objective);
  }
}
BENCHMARK(BM_spgd_fit)->Arg(200)->Arg(400)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
