#include <benchmark/benchmark.h>

#include <random>

#include "advsep/attack.hpp"
#include "advsep/blackbox.hpp"
#include "advsep/detector.hpp"
#include "advsep/metrics.hpp"
#include "advsep/mlp.hpp"

using namespace advsep;

namespace {

Array random_input(std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Array x = Array::vector(std::vector<double>(d));
  for (double& v : x.storage()) v = u(rng);
  return x;
}

// MNIST-sized detector network: 784 -> 256 -> 128 -> 11.
MlpModel mnist_net() { return make_detector_network(784, {256, 128}, 10, DetectorMode::ours, 1); }

void BM_Forward(benchmark::State& state) {
  const MlpModel m = mnist_net();
  const Array x = random_input(784, 2);
  for (auto _ : state) benchmark::DoNotOptimize(forward(m, x));
}
BENCHMARK(BM_Forward);

void BM_InputGrad(benchmark::State& state) {
  const MlpModel m = mnist_net();
  const Array x = random_input(784, 2);
  const LossSpec loss{CenterDistanceLoss{make_centers(10).center(3), false}};
  for (auto _ : state) benchmark::DoNotOptimize(input_grad(m, x, loss));
}
BENCHMARK(BM_InputGrad);

void BM_FullGrad(benchmark::State& state) {
  const MlpModel m = mnist_net();
  const Array x = random_input(784, 2);
  const LossSpec loss{CenterDistanceLoss{make_centers(10).center(3), true}};
  for (auto _ : state) benchmark::DoNotOptimize(grad(m, x, loss));
}
BENCHMARK(BM_FullGrad);

void BM_AdaptivePgd(benchmark::State& state) {
  DetectorModel det;
  det.model = mnist_net();
  det.centers = make_centers(10);
  det.thresholds = Array::vector(std::vector<double>(10, 0.5));
  const Array x = random_input(784, 3);
  AttackConfig cfg;
  cfg.epsilon = 0.3;
  cfg.alpha = 0.01;
  cfg.iters = static_cast<std::size_t>(state.range(0));
  const AttackObjective obj = adaptive_objective(det, 0, std::nullopt);
  for (auto _ : state) benchmark::DoNotOptimize(pgd(det.model, obj, x, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AdaptivePgd)->Arg(20)->Arg(200);

void BM_ProjectL1(benchmark::State& state) {
  const Array d = random_input(static_cast<std::size_t>(state.range(0)), 4);
  for (auto _ : state) benchmark::DoNotOptimize(project(d, Norm::l1, 1.0));
}
BENCHMARK(BM_ProjectL1)->Arg(784)->Arg(3072);

void BM_NesGrad(benchmark::State& state) {
  const MlpModel m = mnist_net();
  const Array x = random_input(784, 5);
  const ScalarFn f = [&](const Array& v) { return forward(m, v)[0]; };
  for (auto _ : state) benchmark::DoNotOptimize(nes_grad(f, x, 0.028, 50, 1));
}
BENCHMARK(BM_NesGrad);

void BM_RocAuc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(6);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> pos(n), neg(n);
  for (double& v : pos) v = normal(rng) + 0.5;
  for (double& v : neg) v = normal(rng);
  for (auto _ : state) benchmark::DoNotOptimize(roc_auc(pos, neg));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_RocAuc)->RangeMultiplier(10)->Range(100, 100000)->Complexity(benchmark::oNLogN);

}  // namespace

BENCHMARK_MAIN();
