// Parallel kernels against their serial references.

#include "regime/bench.hpp"
#include "regime/dpmm.hpp"
#include "regime/gp.hpp"
#include "regime/kernels.hpp"
#include "regime/svc.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace regime;

namespace {

Matrix points(Eigen::Index n, Eigen::Index m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix x(n, m);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  return x;
}

const svc::KernelParams kKernel{Vector::Constant(3, 0.7)};

void BM_GramParallel(benchmark::State& state) {
  const Matrix x = points(state.range(0), 3, 1);
  for (auto _ : state) benchmark::DoNotOptimize(gram_matrix(x, kKernel));
}

void BM_GramSerial(benchmark::State& state) {
  const Matrix x = points(state.range(0), 3, 1);
  for (auto _ : state) benchmark::DoNotOptimize(reference::gram_matrix(x, kKernel));
}

std::pair<Matrix, std::vector<dpmm::NiwParams>> mixture_inputs(Eigen::Index n) {
  const bench::ProblemSpec ps;
  const Matrix x = ps.sample_inputs(n, 2);
  const ExperimentalDesign ed(x, ps.evaluate(x));
  const Matrix w = fit_standardizer(ed).standardize_joint(ed.joint());
  dpmm::DpmmConfig cfg;
  cfg.restarts = 1;
  auto st = dpmm::fit(w.topRows(200), cfg, 1).state;
  return {w, std::move(st.tau)};
}

void BM_ExpectedLogLikParallel(benchmark::State& state) {
  const auto [w, tau] = mixture_inputs(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(dpmm::expected_log_likelihood(w, tau));
}

void BM_ExpectedLogLikSerial(benchmark::State& state) {
  const auto [w, tau] = mixture_inputs(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(dpmm::reference::expected_log_likelihood(w, tau));
}

gp::GpModel gp_model() {
  const Matrix x = points(200, 3, 3);
  Vector y(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) y[i] = std::sin(3.0 * x(i, 0)) + x(i, 1) * x(i, 2);
  return gp::assemble(x, y, {}, CorrelationFamily::Matern52, Vector::Constant(3, 0.5), 1e-8);
}

void BM_GpPredictParallel(benchmark::State& state) {
  const auto model = gp_model();
  const Matrix q = points(state.range(0), 3, 4);
  for (auto _ : state) benchmark::DoNotOptimize(gp::predict_batch(model, q));
}

void BM_GpPredictSerial(benchmark::State& state) {
  const auto model = gp_model();
  const Matrix q = points(state.range(0), 3, 4);
  for (auto _ : state) benchmark::DoNotOptimize(gp::reference::predict_batch(model, q));
}

}  // namespace

BENCHMARK(BM_GramParallel)->Arg(200)->Arg(800)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GramSerial)->Arg(200)->Arg(800)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ExpectedLogLikParallel)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ExpectedLogLikSerial)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GpPredictParallel)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GpPredictSerial)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
