// Serial vs OpenMP timings for the data-parallel kernels. Each fixture checks
// that the parallel path reproduces the serial reference before timing it.
#include <benchmark/benchmark.h>

#include <cstdlib>
#include <iostream>

#include "finpred/evalharness.hpp"
#include "finpred/fnn.hpp"
#include "finpred/ingest.hpp"
#include "finpred/random.hpp"
#include "finpred/registry.hpp"
#include "finpred/regressors.hpp"

using namespace finpred;

namespace {

Exec exec_of(const benchmark::State& state) { return state.range(0) ? Exec::Parallel : Exec::Serial; }

void require(bool ok, const char* what) {
  if (!ok) {
    std::cerr << "parallel result differs from serial reference: " << what << "\n";
    std::abort();
  }
}

Matrix gaussian(std::size_t n, std::size_t p, std::uint64_t seed) {
  auto rng = Rng::stream(seed, "bench");
  Matrix X(n, p);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) X(i, j) = rng.normal();
  return X;
}

struct Corpus {
  SynthCorpus synth;
  IngestResult ingested;
  Panel panel;
};

const Corpus& corpus() {
  static const Corpus c = [] {
    SynthConfig cfg;
    cfg.companies = 200;
    cfg.quarters = 12;
    Corpus out{generate_synthetic(cfg, 7), {}, {}};
    out.ingested = ingest_filings(out.synth.filings, TagMap::standard());
    out.panel = filter_outliers(assemble_panel(out.ingested.statements, out.synth.macro), {});
    return out;
  }();
  return c;
}

void BM_KnnPredict(benchmark::State& state) {
  const Matrix train = gaussian(2000, 16, 1);
  const Vector y = gaussian(2000, 1, 2).col(0);
  const Matrix query = gaussian(1000, 16, 3);
  const auto model = fit_knn(train, y, 5);
  static const bool checked = [&] {
    require(model.predict(query, Exec::Serial) == model.predict(query, Exec::Parallel), "knn");
    return true;
  }();
  (void)checked;
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(query, exec_of(state)));
}

void BM_Correlation(benchmark::State& state) {
  const Matrix X = gaussian(5000, 40, 4);
  static const bool checked = [&] {
    require(correlation_matrix(X, Exec::Serial).r == correlation_matrix(X, Exec::Parallel).r, "correlation");
    return true;
  }();
  (void)checked;
  for (auto _ : state) benchmark::DoNotOptimize(correlation_matrix(X, exec_of(state)));
}

void BM_FnnForward(benchmark::State& state) {
  const auto arch = FnnArchitecture::make(FnnVariant::DeepWide, 16);
  const Matrix X = gaussian(5000, 16, 5);
  const Vector params = gaussian(param_count(arch), 1, 6).col(0) * 0.1;
  const std::span<const double> p{params.data(), static_cast<std::size_t>(params.size())};
  static const bool checked = [&] {
    require(fnn_forward_batch(arch, p, X, Exec::Serial) == fnn_forward_batch(arch, p, X, Exec::Parallel), "fnn");
    return true;
  }();
  (void)checked;
  for (auto _ : state) benchmark::DoNotOptimize(fnn_forward_batch(arch, p, X, exec_of(state)));
}

void BM_AssemblePanel(benchmark::State& state) {
  const auto& c = corpus();
  static const bool checked = [&] {
    require(panel_digest(assemble_panel(c.ingested.statements, c.synth.macro, Exec::Serial)) ==
                panel_digest(assemble_panel(c.ingested.statements, c.synth.macro, Exec::Parallel)),
            "assemble_panel");
    return true;
  }();
  (void)checked;
  for (auto _ : state)
    benchmark::DoNotOptimize(assemble_panel(c.ingested.statements, c.synth.macro, exec_of(state)));
}

GridConfig grid_config(Exec exec) {
  GridConfig g;
  g.tasks = {Task::ROA, Task::NetMargin};
  g.scenarios = {ScenarioId::Base, ScenarioId::AllVariables};
  g.models = {ModelSpec::parse("linreg"), ModelSpec::parse("knn"), ModelSpec::parse("cart")};
  g.folds = 5;
  g.seed = 3;
  g.exec = exec;
  return g;
}

void BM_Grid(benchmark::State& state) {
  const auto& panel = corpus().panel;
  static const bool checked = [&] {
    const auto a = run_grid(panel, grid_config(Exec::Serial));
    const auto b = run_grid(panel, grid_config(Exec::Parallel));
    bool same = a.cells.size() == b.cells.size();
    for (std::size_t i = 0; same && i < a.cells.size(); ++i) same = a.cells[i].fold_mse == b.cells[i].fold_mse;
    require(same, "grid");
    return true;
  }();
  (void)checked;
  const auto cfg = grid_config(exec_of(state));
  for (auto _ : state) benchmark::DoNotOptimize(run_grid(panel, cfg));
}

}  // namespace

// Arg 0 = serial reference, 1 = OpenMP.
BENCHMARK(BM_KnnPredict)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Correlation)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FnnForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AssemblePanel)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Grid)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
