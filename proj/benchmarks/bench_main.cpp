#include <benchmark/benchmark.h>

#include <random>

#include "pedmr/assoc.hpp"
#include "pedmr/bayes_model.hpp"
#include "pedmr/fit.hpp"
#include "pedmr/freq_mr.hpp"
#include "pedmr/pedigree.hpp"
#include "pedmr/simulate.hpp"

namespace {

using namespace pedmr;

const simulate::ScenarioData& scenario() {
  static const auto data = simulate::run_scenario(simulate::Scenario{}, 1);
  return data;
}

void BM_Kinship(benchmark::State& state) {
  const auto ped = simulate::simulate_pedigree(static_cast<int>(state.range(0)), 4, 3, 7);
  for (auto _ : state) benchmark::DoNotOptimize(pedigree::kinship_matrix(ped));
  state.counters["members"] = static_cast<double>(ped.size());
}
BENCHMARK(BM_Kinship)->Arg(4)->Arg(12)->Arg(48);

void BM_RelationshipCholesky(benchmark::State& state) {
  const auto& k = scenario().kinship;
  for (auto _ : state) benchmark::DoNotOptimize(pedigree::relationship_cholesky(k, 2.0));
}
BENCHMARK(BM_RelationshipCholesky);

void BM_Gradient(benchmark::State& state) {
  bayes::ModelConfig cfg;
  cfg.level = static_cast<bayes::Level>(state.range(0));
  const auto prep = fit::prepare(scenario().sim.data, &scenario().kinship, cfg);
  const bayes::PosteriorModel model(prep.data, prep.relationship_cholesky, cfg);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd v(static_cast<Eigen::Index>(model.dim()));
  for (auto& x : v) x = u(rng);
  Eigen::VectorXd g;
  for (auto _ : state) benchmark::DoNotOptimize(model.log_density_gradient(v, g));
  state.SetLabel(std::string(bayes::level_name(cfg.level)));
  state.counters["dim"] = static_cast<double>(model.dim());
}
BENCHMARK(BM_Gradient)->DenseRange(0, 3);

void BM_AssocScan(benchmark::State& state) {
  const auto& d = scenario();
  const Eigen::MatrixXd rel = 2.0 * d.kinship.subset(d.sim.data.ids).phi;
  for (auto _ : state) benchmark::DoNotOptimize(assoc::assoc_scan(d.sim.data, rel, true));
}
BENCHMARK(BM_AssocScan)->Unit(benchmark::kMillisecond);

void BM_FreqMethods(benchmark::State& state) {
  const auto& d = scenario();
  const Eigen::MatrixXd rel = 2.0 * d.kinship.subset(d.sim.data.ids).phi;
  const auto stats = assoc::assoc_scan(d.sim.data, rel, true);
  for (auto _ : state) benchmark::DoNotOptimize(freq_mr::run_all(stats));
}
BENCHMARK(BM_FreqMethods)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
