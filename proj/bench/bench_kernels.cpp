#include <benchmark/benchmark.h>

#include <random>

#include "bec/kernels.hpp"
#include "bec/lpcore.hpp"
#include "bec/model.hpp"

namespace {

bec::BilevelProblem load(const char* name) { return bec::load_problem_file(std::string(BEC_DATA_DIR) + "/" + name); }

bec::Exec exec_of(const benchmark::State& s) { return s.range(0) ? bec::Exec::parallel : bec::Exec::serial; }

Eigen::VectorXd v1(double a) { return Eigen::VectorXd::Constant(1, a); }

void BM_grid_value_function(benchmark::State& state) {
  const auto prob = load("band.blp");
  bec::GridSpecW grid{v1(-3), v1(3), 1e-5};
  for (auto _ : state) benchmark::DoNotOptimize(bec::grid_minimize(prob, v1(0), std::nullopt, grid, exec_of(state)));
}

void BM_grid_prox_2d(benchmark::State& state) {
  const auto prob = load("disk.blp");
  Eigen::VectorXd lo(2), hi(2), y(2);
  lo << -1.5, -1.5;
  hi << 1.5, 1.5;
  y << 0.9, -0.3;
  bec::GridSpecW grid{lo, hi, 2e-3};
  for (auto _ : state) benchmark::DoNotOptimize(bec::grid_minimize(prob, v1(0.3), y, grid, exec_of(state)));
}

void BM_envelope_batch(benchmark::State& state) {
  const auto prob = load("disk.blp");
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  std::vector<bec::EvalPoint> pts;
  for (int k = 0; k < 2000; ++k) {
    Eigen::VectorXd y(2);
    y << u(rng), u(rng);
    pts.push_back({v1(u(rng)), y});
  }
  for (auto _ : state) benchmark::DoNotOptimize(bec::envelope_batch(prob, pts, {}, exec_of(state)));
}

void BM_midpoint(benchmark::State& state) {
  const auto prob = load("band.blp");
  Eigen::VectorXd lo(2), hi(2);
  lo << -1, -2;
  hi << 1, 0;
  for (auto _ : state) benchmark::DoNotOptimize(bec::midpoint_check(prob, lo, hi, 500, 20.0, 1, exec_of(state)));
}

void BM_vertices(benchmark::State& state) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  const int n = 8;
  bec::Polyhedron P(n);
  for (int i = 0; i < 11; ++i) {
    Eigen::RowVectorXd row(n);
    for (int j = 0; j < n; ++j) row[j] = u(rng);
    P.add_ineq(row, 1.0 + std::abs(u(rng)));
  }
  P.add_ineq(Eigen::RowVectorXd::Ones(n), 3.0);
  for (auto _ : state) benchmark::DoNotOptimize(bec::vertices(P, exec_of(state)));
}

}  // namespace

BENCHMARK(BM_grid_value_function)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_grid_prox_2d)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_envelope_batch)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_midpoint)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_vertices)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
