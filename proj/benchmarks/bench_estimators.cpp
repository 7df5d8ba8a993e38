#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "robhet/mm_regression.hpp"
#include "robhet/pipelines.hpp"
#include "robhet/scale_solvers.hpp"
#include "robhet/simulation.hpp"

namespace {

robhet::Dataset contaminated(std::size_t n) {
  const auto clean = robhet::generate_sample(n, robhet::reference_truth(), 1);
  return robhet::apply_contamination(clean, *robhet::builtin_scheme("C2"), 2);
}

void BM_MScale(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  std::vector<double> r(static_cast<std::size_t>(state.range(0)));
  for (double& v : r) v = z(rng);
  for (auto _ : state) benchmark::DoNotOptimize(robhet::m_scale(r));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_MScale)->RangeMultiplier(10)->Range(100, 100000)->Complexity();

void BM_NonlinearMm(benchmark::State& state) {
  const auto data = contaminated(static_cast<std::size_t>(state.range(0)));
  const auto model = robhet::exponential_experiment_model();
  for (auto _ : state) benchmark::DoNotOptimize(robhet::nonlinear_mm(data, model).beta);
}
BENCHMARK(BM_NonlinearMm)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_FitStepwiseN(benchmark::State& state) {
  const auto data = contaminated(static_cast<std::size_t>(state.range(0)));
  const auto model = robhet::exponential_experiment_model();
  for (auto _ : state) {
    benchmark::DoNotOptimize(robhet::fit_stepwise_n(data, model, {}, robhet::Weighting::bisquare_leverage).beta);
  }
}
BENCHMARK(BM_FitStepwiseN)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_GlobalLs(benchmark::State& state) {
  const auto data = contaminated(100);
  const auto model = robhet::exponential_experiment_model();
  for (auto _ : state) benchmark::DoNotOptimize(robhet::global_nonlinear_ls(data, model).beta);
}
BENCHMARK(BM_GlobalLs)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
