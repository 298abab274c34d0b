#include <benchmark/benchmark.h>

#include <Eigen/Core>
#include <vector>

#include "darn/data.hpp"
#include "darn/discrepancy.hpp"
#include "darn/rng.hpp"
#include "darn/simplex.hpp"
#include "darn/trainer.hpp"

namespace {

Eigen::VectorXd random_z(int k, std::uint64_t seed) {
  darn::Rng rng(seed);
  Eigen::VectorXd z(k);
  for (int i = 0; i < k; ++i) z[i] = rng.uniform(-3.0, 3.0);
  return z;
}

void BM_FindNu(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  const Eigen::VectorXd z = random_z(k, 42);
  for (auto _ : state) {
    double nu = darn::find_nu(z);
    benchmark::DoNotOptimize(nu);
  }
  state.SetComplexityN(k);
}
BENCHMARK(BM_FindNu)->RangeMultiplier(10)->Range(10, 100000)->Complexity(benchmark::oN);

void BM_Project(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  const Eigen::VectorXd z = random_z(k, 42);
  for (auto _ : state) {
    darn::ProjectionResult pr = darn::darn_project(z);
    benchmark::DoNotOptimize(pr.weights.alpha.data());
  }
  state.SetComplexityN(k);
}
BENCHMARK(BM_Project)->RangeMultiplier(10)->Range(10, 100000)->Complexity(benchmark::oN);

void BM_Jvp(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  const Eigen::VectorXd z = random_z(k, 42);
  const darn::ProjectionResult pr = darn::darn_project(z);
  const Eigen::VectorXd v = random_z(k, 43);
  for (auto _ : state) {
    Eigen::VectorXd jv = darn::darn_jvp(z, pr, v);
    benchmark::DoNotOptimize(jv.data());
  }
  state.SetComplexityN(k);
}
BENCHMARK(BM_Jvp)->RangeMultiplier(10)->Range(10, 100000)->Complexity(benchmark::oN);

// dense contrast for the O(k) product above; k^2 memory, so the range stays small
void BM_DenseJacobian(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  const Eigen::VectorXd z = random_z(k, 42);
  const darn::ProjectionResult pr = darn::darn_project(z);
  for (auto _ : state) {
    Eigen::MatrixXd j = darn::darn_jacobian(z, pr);
    benchmark::DoNotOptimize(j.data());
  }
  state.SetComplexityN(k);
}
BENCHMARK(BM_DenseJacobian)->RangeMultiplier(4)->Range(4, 1024)->Complexity(benchmark::oNSquared);

void BM_PowerIteration(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  darn::Rng rng(7);
  Eigen::MatrixXd m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = rng.uniform(-1.0, 1.0);
  m = ((m + m.transpose()) / 2.0).eval();
  for (auto _ : state) {
    darn::PowerIterationResult r = darn::power_iteration(m, 100, 1e-9, 11);
    benchmark::DoNotOptimize(r.value);
  }
  state.SetComplexityN(n);
}
BENCHMARK(BM_PowerIteration)->RangeMultiplier(2)->Range(8, 256)->Complexity(benchmark::oNSquared);

void BM_TrainStep(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  std::vector<double> angles;
  for (int i = 0; i < k; ++i) angles.push_back(15.0 * i);
  angles.push_back(10.0);
  const darn::MultiDomainDataset data = darn::gen_rotated_gaussians(k, 64, angles, 0.3, 5);

  darn::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 32;

  darn::Architecture arch;
  arch.input_dim = data.feature_dim();
  arch.feature_layers = cfg.feature_layers;
  arch.label_hidden = cfg.label_hidden;
  arch.label_outputs = cfg.num_classes;
  arch.domain_hidden = cfg.domain_hidden;
  arch.num_domains = k;

  darn::ModelParams params = darn::init_model(arch, cfg.seed);
  darn::OptimizerState opt = darn::OptimizerState::create(params, cfg.optimizer);

  std::vector<darn::Batch> src;
  std::vector<int> idx;
  for (int r = 0; r < cfg.batch_size; ++r) idx.push_back(r);
  for (const darn::DomainDataset& d : data.sources) src.push_back(darn::gather(d, idx));
  const darn::Batch tgt = darn::gather(data.target_train, idx);

  std::uint64_t step = 0;
  for (auto _ : state) {
    darn::StepMetrics m = darn::train_step(params, opt, src, tgt, cfg, ++step);
    benchmark::DoNotOptimize(m.objective);
  }
  state.SetComplexityN(k);
}
BENCHMARK(BM_TrainStep)->DenseRange(2, 8, 2);

}  // namespace

BENCHMARK_MAIN();
