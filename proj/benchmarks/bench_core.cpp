// SPDX-License-Identifier: Apache-2.0
#include <numeric>
#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "mtlc/curves.hpp"
#include "mtlc/data.hpp"
#include "mtlc/fitter.hpp"
#include "mtlc/learner.hpp"
#include "mtlc/metrics.hpp"
#include "mtlc/tag.hpp"

namespace mtlc {
namespace {

ParamSet sample_params() {
  ParamSet p;
  p.a_i = 1.2;
  p.a_ij = 0.3;
  p.a_sigma = 0.4;
  p.b = -0.5;
  p.c = 0.9;
  p.alpha = 0.8;
  p.n_scale = 200;
  return p;
}

void BM_EvalCurve(benchmark::State& state) {
  const auto family = static_cast<CurveFamily>(state.range(0));
  const ParamSet p = sample_params();
  CurveArgs a{400, family_arity(family) >= 2 ? 900.0 : 0.0, family_arity(family) == 3 ? 120.0 : 0.0};
  for (auto _ : state) {
    a.n_t += 1e-9;
    benchmark::DoNotOptimize(eval_curve(family, p, a));
  }
  state.SetLabel(std::string(family_name(family)));
}
BENCHMARK(BM_EvalCurve)->DenseRange(0, 4);

void BM_FullGradCurve(benchmark::State& state) {
  const ParamSet p = sample_params();
  const CurveArgs a{400, 900, 120};
  std::array<double, kParamCount> g{};
  for (auto _ : state) {
    benchmark::DoNotOptimize(eval_with_full_grad(CurveFamily::kExp3_3, p, a, g));
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_FullGradCurve);

std::vector<FitPoint> noisy_points(CurveFamily family, int n) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> noise(0.0, 0.003);
  const ParamSet p = sample_params();
  std::vector<FitPoint> pts;
  for (int k = 1; k <= n; ++k) {
    const CurveArgs a{120.0 * k, family_arity(family) >= 2 ? 800.0 * k : 0.0, 0.0};
    pts.push_back({a, eval_curve(family, p, a) + noise(rng), k, 1.0});
  }
  return pts;
}

void BM_FitCurve(benchmark::State& state) {
  const auto family = static_cast<CurveFamily>(state.range(0));
  const auto pts = noisy_points(family, 8);
  const ParamSet init = init_heuristic(pts, family);
  FitOptions opts;
  opts.restarts = static_cast<int>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(fit_curve(pts, family, init, FreezeMask{}, opts).sse);
  state.SetLabel(std::string(family_name(family)));
}
BENCHMARK(BM_FitCurve)
    ->Args({static_cast<int>(CurveFamily::kExp3_1), 0})
    ->Args({static_cast<int>(CurveFamily::kExp3_1), 15})
    ->Args({static_cast<int>(CurveFamily::kExp4), 15})
    ->Args({static_cast<int>(CurveFamily::kExp3_2), 15});

struct TrainingFixture {
  Dataset ds;
  TrainingSelection sel;
  Batch batch;
  ModelParams params;

  TrainingFixture(std::size_t K, std::size_t r) {
    SynthConfig s;
    s.n_rows = 256;
    s.K = K;
    s.n_groups = 2;
    ds = synth_generate(s).dataset;
    const FoldAssignment fa = assign_folds(ds, 2, FoldGrouping::kRow, 1);
    const std::vector<int> counts(K, 1);
    sel = training_subset(ds, fa, counts);
    const std::vector<std::size_t> rows(sel.rows.begin(), sel.rows.begin() + std::min<std::size_t>(64, sel.rows.size()));
    batch = make_batch(ds, sel, rows);
    ModelConfig cfg;
    cfg.d = ds.d();
    cfg.K = K;
    cfg.r = r;
    params = init_params(cfg);
  }
};

void BM_TrainingStepGradient(benchmark::State& state) {
  const TrainingFixture f(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(full_grad(f.params, f.batch).b2(0));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.batch.size()));
}
BENCHMARK(BM_TrainingStepGradient)->Args({8, 16})->Args({12, 64})->Args({64, 64});

void BM_AffinityStep(benchmark::State& state) {
  const TrainingFixture f(static_cast<std::size_t>(state.range(0)), 16);
  for (auto _ : state) benchmark::DoNotOptimize(affinity_step(f.params, f.batch, 1e-3).step);
}
BENCHMARK(BM_AffinityStep)->Arg(8)->Arg(16);

void BM_Train(benchmark::State& state) {
  TrainingFixture f(8, 16);
  ModelConfig cfg;
  cfg.d = f.ds.d();
  cfg.K = 8;
  cfg.r = 16;
  cfg.epochs = 5;
  cfg.learning_rate = 2e-3;
  for (auto _ : state) benchmark::DoNotOptimize(train(f.ds, f.sel, cfg).params.b2(0));
}
BENCHMARK(BM_Train)->Unit(benchmark::kMillisecond);

void BM_Auroc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> scores(n);
  std::vector<std::uint8_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = u(rng) < 0.3 ? 1 : 0;
    scores[i] = u(rng) + 0.3 * labels[i];
  }
  const ScoredLabels data{scores, labels};
  for (auto _ : state) benchmark::DoNotOptimize(auroc(data));
  state.SetComplexityN(static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Auroc)->RangeMultiplier(8)->Range(64, 1 << 18)->Complexity(benchmark::oNLogN);

void BM_Aupr(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> scores(n);
  std::vector<std::uint8_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = u(rng) < 0.3 ? 1 : 0;
    scores[i] = u(rng) + 0.3 * labels[i];
  }
  const ScoredLabels data{scores, labels};
  for (auto _ : state) benchmark::DoNotOptimize(aupr(data));
}
BENCHMARK(BM_Aupr)->RangeMultiplier(8)->Range(64, 1 << 18);

}  // namespace
}  // namespace mtlc

BENCHMARK_MAIN();
