// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion. Arguments select
// criteria by number (all when none are given); exit status is non-zero when
// any selected criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <spdlog/spdlog.h>

#include "cli/app.hpp"
#include "mtlc/csv.hpp"
#include "mtlc/curves.hpp"
#include "mtlc/data.hpp"
#include "mtlc/error.hpp"
#include "mtlc/fitter.hpp"
#include "mtlc/grid.hpp"
#include "mtlc/hash.hpp"
#include "mtlc/learner.hpp"
#include "mtlc/metrics.hpp"
#include "mtlc/report.hpp"
#include "mtlc/tag.hpp"
#include "oracles.hpp"

namespace mtlc {
namespace {

namespace fs = std::filesystem;
using testing::Rng;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> run;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int workers() { return static_cast<int>(std::max(1U, std::thread::hardware_concurrency())); }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mtlc_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---------------------------------------------------------------- 1

Outcome curve_round_trip() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst_sse = 0.0, worst_held = 0.0;
  for (CurveFamily family : {CurveFamily::kExp4, CurveFamily::kExp3_1, CurveFamily::kIlog2, CurveFamily::kExp3_2,
                             CurveFamily::kExp3_3}) {
    for (int rep = 0; rep < 4; ++rep) {
      ParamSet truth;
      truth.a_i = testing::uniform(rng, 0.8, 2.5);
      truth.b = testing::uniform(rng, -1.0, 0.0);
      truth.c = testing::uniform(rng, 0.8, 0.95);
      truth.alpha = testing::uniform(rng, 0.6, 1.5);
      truth.a_sigma = testing::uniform(rng, 0.2, 0.8);
      truth.a_ij = testing::uniform(rng, 0.2, 0.8);
      truth.n_scale = 400;
      if (family == CurveFamily::kIlog2) {
        truth.a_i = testing::uniform(rng, 0.1, 0.5);
        truth.n_scale = 1;
      }
      const int p = static_cast<int>(family_params(family).size());
      std::vector<FitPoint> pts;
      std::vector<CurveArgs> held;
      for (int k = 0; k < 2 * p + 4; ++k) {
        CurveArgs a{40.0 + 45.0 * k + testing::uniform(rng, 0, 10), 0, 0};
        if (family_arity(family) >= 2) a.n_sigma = testing::uniform(rng, 0, 800);
        if (family_arity(family) == 3) a.n_aux = testing::uniform(rng, 0, 200);
        if (k % 4 == 3) {
          held.push_back(a);
        } else {
          pts.push_back({a, testing::ref_curve(family, truth, a), k + 1, 1.0});
        }
      }
      FitOptions opts;
      opts.seed = static_cast<std::uint64_t>(rep);
      const FitResult res = fit_curve(pts, family, init_heuristic(pts, family), FreezeMask{}, opts);
      worst_sse = std::max(worst_sse, res.sse);
      for (const auto& a : held) {
        worst_held = std::max(worst_held, std::abs(eval_curve(family, res.params, a) - testing::ref_curve(family, truth, a)));
      }
    }
  }

  // Staged recovery of a vanishing pairwise rate.
  ParamSet t;
  t.a_i = 1.5;
  t.a_sigma = 0.3;
  t.a_ij = 0.0;
  t.b = -0.4;
  t.c = 0.88;
  t.n_scale = 500;
  ParamSet single = t;
  single.b = -0.2;
  single.c = 0.84;
  std::vector<FitPoint> stl, mtl;
  std::map<int, std::vector<FitPoint>> stag;
  for (int m = 1; m <= 5; ++m) {
    const CurveArgs s{100.0 * m, 0, 0};
    stl.push_back({s, testing::ref_curve(CurveFamily::kExp3_1, single, s), m, 1});
    const CurveArgs a{100.0 * m, 700.0 * m, 0};
    mtl.push_back({a, testing::ref_curve(CurveFamily::kExp3_2, t, a), m, 1});
  }
  for (int j : {1, 2, 3}) {
    const double per_fold = 80.0 + 15.0 * j;
    for (int extra : {1, 0}) {
      for (int m = 1; m <= 4; ++m) {
        const CurveArgs a{100.0 * m, 700.0 * m - per_fold * m, per_fold * (m + extra)};
        stag[j].push_back({a, testing::ref_curve(CurveFamily::kExp3_3, t, a), m, 1});
      }
    }
  }
  const StagedFit sf = fit_staged(stl, mtl, stag, 0);
  double worst_aij = sf.stage3.empty() ? 1.0 : 0.0;
  for (const auto& [j, r] : sf.stage3) worst_aij = std::max(worst_aij, std::abs(r.params.a_ij));

  const double secs = seconds_since(t0);
  const bool pass = worst_sse < 1e-12 && worst_held < 1e-6 && worst_aij < 1e-3 && sf.stage3.size() == 3 && secs < 10;
  return {pass, "max SSE " + sci(worst_sse) + ", max held-out error " + sci(worst_held) +
                    ", max |a_ij| " + sci(worst_aij) + ", " + fmt(secs, 2) + " s"};
}

// ---------------------------------------------------------------- 2

Outcome jacobian_exactness() {
  const auto t0 = Clock::now();
  Rng rng(202);
  double worst = 0.0;
  std::size_t partials = 0;
  for (int draw = 0; draw < 1000; ++draw) {
    const auto d = testing::random_curve_draw(rng);
    const auto g = grad_params(d.family, d.params, d.args);
    const auto free = free_params(d.family, d.params);
    for (std::size_t k = 0; k < free.size(); ++k) {
      const double x = d.params.get(free[k]);
      const double h = 1e-6 * std::max(1.0, std::abs(x));
      ParamSet hi = d.params, lo = d.params;
      hi.set(free[k], x + h);
      lo.set(free[k], x - h);
      const double fd = (testing::ref_curve(d.family, hi, d.args) - testing::ref_curve(d.family, lo, d.args)) / (2 * h);
      worst = std::max(worst, std::abs(g[k] - fd) / std::max({std::abs(g[k]), std::abs(fd), 1e-6}));
      ++partials;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 5,
          std::to_string(partials) + " partials, max relative error " + sci(worst) + ", " + fmt(secs, 2) + " s"};
}

// ---------------------------------------------------------------- 3

Outcome metric_oracles() {
  Rng rng(303);
  double worst_auroc = 0.0, worst_aupr = 0.0, worst_p = 0.0;
  int spearman_cases = 0;
  for (int inst = 0; inst < 500; ++inst) {
    const int n = testing::uniform_int(rng, 2, 12);
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<std::uint8_t> y(s.size());
    // Coarse scores so ties are common.
    for (auto& v : s) v = std::round(testing::uniform(rng, 0, 4));
    for (auto& v : y) v = testing::uniform(rng, 0, 1) < 0.5 ? 1 : 0;
    y[0] = 1;
    y[1] = 0;
    const ScoredLabels data{s, y};
    worst_auroc = std::max(worst_auroc, std::abs(auroc(data) - testing::brute_auroc(s, y)));
    worst_aupr = std::max(worst_aupr, std::abs(aupr(data) - testing::brute_aupr(s, y)));
    if (n >= 3 && n <= 8) {
      std::vector<double> x(s.size()), z(s.size());
      for (auto& v : x) v = std::round(testing::uniform(rng, 0, 6));
      for (auto& v : z) v = testing::uniform(rng, 0, 1);
      x[0] = -1;
      x[1] = 7;
      try {
        const CorrResult c = spearman(x, z);
        worst_p = std::max(worst_p, std::abs(c.p - testing::brute_spearman_p(x, z)));
        ++spearman_cases;
      } catch (const DegenerateInput&) {
      }
    }
  }
  const bool pass = worst_auroc < 1e-12 && worst_aupr < 1e-12 && worst_p < 1e-12 && spearman_cases > 100;
  return {pass, "AUROC " + sci(worst_auroc) + ", AUPR " + sci(worst_aupr) + ", Spearman p " +
                    sci(worst_p) + " over " + std::to_string(spearman_cases) + " exact cases"};
}

// ---------------------------------------------------------------- 4

Batch whole_batch(const Dataset& ds) {
  const TrainingSelection sel = testing::all_present(ds);
  std::vector<std::size_t> rows(ds.n_rows());
  std::iota(rows.begin(), rows.end(), 0);
  return make_batch(ds, sel, rows);
}

Outcome learner_correctness() {
  Rng rng(404);
  double worst = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t d = testing::uniform_int(rng, 1, 8), r = testing::uniform_int(rng, 1, 8),
                      K = testing::uniform_int(rng, 1, 4);
    const Dataset ds = testing::random_dataset(rng, 16, d, K);
    const Batch batch = whole_batch(ds);
    ModelParams p = ModelParams::zeros(d, r, K);
    for (auto* m : {&p.w1, &p.w2}) {
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = testing::uniform(rng, -1, 1);
    }
    for (auto* v : {&p.b1, &p.b2}) {
      for (Eigen::Index i = 0; i < v->size(); ++i) v->data()[i] = testing::uniform(rng, -1, 1);
    }
    const ModelParams g = full_grad(p, batch);
    auto check = [&](double& v, double analytic) {
      const double x = v, h = 1e-6 * std::max(1.0, std::abs(x));
      v = x + h;
      const double hi = batch_loss(p, batch);
      v = x - h;
      const double lo = batch_loss(p, batch);
      v = x;
      const double fd = (hi - lo) / (2 * h);
      // Kinks of the ReLU make a difference quotient meaningless right at zero.
      worst = std::max(worst, std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-4}));
    };
    for (Eigen::Index i = 0; i < p.w1.size(); ++i) check(p.w1.data()[i], g.w1.data()[i]);
    for (Eigen::Index i = 0; i < p.b1.size(); ++i) check(p.b1.data()[i], g.b1.data()[i]);
    for (Eigen::Index i = 0; i < p.w2.size(); ++i) check(p.w2.data()[i], g.w2.data()[i]);
    for (Eigen::Index i = 0; i < p.b2.size(); ++i) check(p.b2.data()[i], g.b2.data()[i]);
  }

  const Dataset ds = testing::random_dataset(rng, 80, 5, 3, 0.6);
  Dataset flipped = ds;
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    if (!ds.present[i]) flipped.labels[i] ^= 1;
  }
  ModelConfig cfg;
  cfg.d = ds.d();
  cfg.K = ds.K();
  cfg.r = 8;
  cfg.learning_rate = 3e-3;
  cfg.epochs = 5;
  cfg.batch_size = 16;
  cfg.seed = 4;
  const bool masked = train(ds, testing::all_present(ds), cfg).params ==
                      train(flipped, testing::all_present(flipped), cfg).params;

  cfg.batch_size = ds.n_rows();
  cfg.epochs = 50;
  cfg.learning_rate = 1e-3;
  std::vector<double> losses;
  const TrainedModel m = train(ds, testing::all_present(ds), cfg,
                               [&](const StepContext& s) { losses.push_back(batch_loss(s.params, s.batch)); });
  losses.push_back(batch_loss(m.params, whole_batch(ds)));
  bool monotone = losses.size() == 51 && losses.back() < losses.front();
  for (std::size_t i = 1; i < losses.size(); ++i) monotone = monotone && losses[i] <= losses[i - 1] + 1e-12;

  return {worst < 1e-4 && masked && monotone, "max relative gradient error " + sci(worst) +
                                                  ", masked labels " + (masked ? "invariant" : "CHANGE training") +
                                                  ", full-batch loss " + (monotone ? "monotone" : "NOT monotone")};
}

// ------------------------------------------------------- synthetic regime

// Two latent groups of six tasks. Task 0 is the low-data target.
struct Regime {
  std::size_t n_rows = 6000;
  double target_rate = 0.01;
  double other_rate = 0.05;
  std::size_t r = 32;
  double lr = 0.002;
  int n_folds = 6;
  int m_max = 5;
  int n_shifts = 4;
  int epochs_stl = 40;
  int epochs_mtl = 40;
  std::size_t batch = 64;
  double noise_sd = 0.2;
  std::size_t d = 16;
};

SynthConfig regime_data(const Regime& g, std::uint64_t seed) {
  SynthConfig s;
  s.n_rows = g.n_rows;
  s.K = 12;
  s.n_groups = 2;
  s.within_group_angle = 0.2;
  s.label_rate.assign(12, g.other_rate);
  s.label_rate[0] = g.target_rate;
  s.noise_sd = g.noise_sd;
  s.d = g.d;
  s.seed = seed;
  return s;
}

ModelConfig regime_model(const Regime& g, int epochs) {
  ModelConfig c;
  c.r = g.r;
  c.learning_rate = g.lr;
  c.batch_size = g.batch;
  c.epochs = epochs;
  return c;
}

std::vector<int> shift_list(int n) {
  std::vector<int> s(static_cast<std::size_t>(n));
  std::iota(s.begin(), s.end(), 0);
  return s;
}

GridPlan regime_plan(const Regime& g, std::uint64_t seed) {
  return plan_grid(12, g.n_folds, g.m_max, shift_list(g.n_shifts), seed, regime_model(g, g.epochs_stl), regime_model(g, g.epochs_mtl));
}

const GridRecord* find_record(const std::vector<GridObservation>& obs, GridKind kind, int m, std::size_t task,
                              int target = -1, int aux = -1) {
  for (const auto& o : obs) {
    if (o.key.kind != kind || o.key.m != m || o.key.target_task != target || o.key.aux_task != aux) continue;
    for (const auto& r : o.records) {
      if (r.task == task) return &r;
    }
  }
  return nullptr;
}

// ---------------------------------------------------------------- 5

Outcome mtl_benefit() {
  const auto t0 = Clock::now();
  const Regime g;
  int wins = 0, cells = 0;
  double gap_sum = 0.0;
  std::string worst;
  double worst_gap = 1.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset ds = synth_generate(regime_data(g, seed)).dataset;
    const FoldAssignment fa = assign_folds(ds, g.n_folds, FoldGrouping::kRow, derive_seed(seed, {101}));
    GridPlan plan = regime_plan(g, seed);
    std::erase_if(plan.entries, [](const GridEntry& e) {
      const bool needed = e.key.kind == GridKind::kMtl || (e.key.kind == GridKind::kStl && e.key.target_task == 0);
      return !needed || e.key.m > 3;
    });
    GridRunOptions opts;
    opts.parallelism = workers();
    const GridResult res = execute_grid(plan, ds, fa, opts);
    const auto avg = average_over_shifts(res.observations);
    for (int m = 1; m <= 3; ++m) {
      const GridRecord* st = find_record(avg, GridKind::kStl, m, 0, 0);
      const GridRecord* mt = find_record(avg, GridKind::kMtl, m, 0);
      ++cells;
      if (!st || !mt || !st->auroc || !mt->auroc) {
        worst = "seed " + std::to_string(seed) + " m=" + std::to_string(m) + " undefined";
        worst_gap = -1.0;
        continue;
      }
      const double gap = *mt->auroc - *st->auroc;
      gap_sum += gap;
      wins += gap > 0 ? 1 : 0;
      if (gap < worst_gap) {
        worst_gap = gap;
        worst = "seed " + std::to_string(seed) + " m=" + std::to_string(m) + " (MTL " + fmt(*mt->auroc, 3) +
                ", STL " + fmt(*st->auroc, 3) + ")";
      }
    }
  }
  const double mean_gap = gap_sum / cells;
  const double secs = seconds_since(t0);
  const bool pass = wins == cells && mean_gap > 0.02 && secs < 300;
  return {pass, "MTL > STL in " + std::to_string(wins) + "/" + std::to_string(cells) + " cells, mean gap " +
                    fmt(mean_gap) + ", smallest gap " + fmt(worst_gap) + " at " + worst + ", " + fmt(secs, 1) + " s"};
}

// ---------------------------------------------------------------- 6

// One-sided rank-sum test that `a` tends to exceed `b` (normal
// approximation with tie correction).
double rank_sum_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> all(a);
  all.insert(all.end(), b.begin(), b.end());
  const auto ranks = testing::mid_ranks(all);
  const double n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size()), n = n1 + n2;
  double r1 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) r1 += ranks[i];
  const double u = r1 - n1 * (n1 + 1) / 2;
  std::map<double, double> ties;
  for (double v : all) ties[v] += 1;
  double tie_term = 0.0;
  for (const auto& [v, t] : ties) tie_term += t * t * t - t;
  const double var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)));
  const double zscore = (u - n1 * n2 / 2) / std::sqrt(var);
  return 0.5 * std::erfc(zscore / std::sqrt(2.0));
}

TagOptions tag_options() {
  TagOptions o;
  o.every = 1;
  o.epochs = 10;
  return o;
}

Outcome transfer_decomposition() {
  const auto t0 = Clock::now();
  const Regime g;
  std::vector<double> within, cross, z_all, a_all;
  int fit_failures = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const SynthResult sr = synth_generate(regime_data(g, seed));
    const Dataset& ds = sr.dataset;
    const FoldAssignment fa = assign_folds(ds, g.n_folds, FoldGrouping::kRow, derive_seed(seed, {101}));
    const GridPlan plan = regime_plan(g, seed);
    GridRunOptions opts;
    opts.parallelism = workers();
    const GridResult res = execute_grid(plan, ds, fa, opts);
    const auto avg = average_over_shifts(res.observations);
    FitOptions fo;
    fo.seed = derive_seed(seed, {202});
    const GridFits fits = fit_grid(avg, 12, Metric::kAuroc, fo, workers());
    fit_failures += static_cast<int>(fits.failures.size());

    std::vector<int> folds;
    for (int m = 1; m < g.m_max; ++m) folds.push_back(m);
    const auto tag = tag_vs_fold_sweep(ds, fa, folds, shift_list(g.n_shifts), plan.mtl, seed, tag_options(), workers());
    const RowMatrix z = mean_affinity(tag, 12);

    for (const auto& f : fits.fits) {
      const auto i = static_cast<std::size_t>(f.target_task);
      for (const auto& [j, r] : f.stage3) {
        const double a = r.params.a_ij;
        (sr.group_of_task[i] == sr.group_of_task[static_cast<std::size_t>(j)] ? within : cross).push_back(a);
        const double zji = z(j, static_cast<Eigen::Index>(i));
        if (std::isfinite(zji)) {
          z_all.push_back(zji);
          a_all.push_back(a);
        }
      }
    }
  }
  auto mean = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  const double p = within.empty() || cross.empty() ? 1.0 : rank_sum_p(within, cross);
  const double rho = z_all.size() < 3 ? 0.0 : testing::brute_spearman_r(z_all, a_all);
  const double secs = seconds_since(t0);
  const bool pass = mean(within) > mean(cross) && p < 0.01 && rho > 0.2 && secs < 900;
  return {pass, "mean a_ij within " + fmt(mean(within)) + " vs cross " + fmt(mean(cross)) + " (n " +
                    std::to_string(within.size()) + "/" + std::to_string(cross.size()) + ", rank-sum p " +
                    sci(p) + "), Spearman(z, a_ij) " + fmt(rho, 3) + " over " +
                    std::to_string(z_all.size()) + " pairs, " + std::to_string(fit_failures) + " fit failures, " +
                    fmt(secs, 1) + " s"};
}

// ---------------------------------------------------------------- 7

Outcome family_selection() {
  int agree = 0;
  std::string misses;
  const CurveFamily families[] = {CurveFamily::kExp3_1, CurveFamily::kIlog2, CurveFamily::kExp4};
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(7000 + seed);
    const std::size_t K = 10;
    const int shifts = 3, folds = 8;
    std::vector<ParamSet> truth(K);
    std::vector<double> per_fold(K);
    for (std::size_t k = 0; k < K; ++k) {
      truth[k].a_i = testing::uniform(rng, 0.5, 2.0);
      truth[k].b = testing::uniform(rng, -1.5, -0.5);
      truth[k].c = testing::uniform(rng, 0.8, 0.95);
      truth[k].n_scale = 1000;
      per_fold[k] = testing::uniform(rng, 60, 200);
    }
    std::normal_distribution<double> noise(0.0, 0.004);
    PointsByShift pts(static_cast<std::size_t>(shifts), std::vector<std::vector<FitPoint>>(K));
    for (int s = 0; s < shifts; ++s) {
      for (std::size_t k = 0; k < K; ++k) {
        double n = 0.0;
        for (int m = 1; m <= folds; ++m) {
          n += per_fold[k] * testing::uniform(rng, 0.85, 1.15);
          const CurveArgs a{n, 0, 0};
          pts[static_cast<std::size_t>(s)][k].push_back({a, testing::ref_curve(CurveFamily::kExp3_1, truth[k], a) + noise(rng), m, 1});
        }
      }
    }
    FitOptions fo;
    fo.seed = seed;
    const auto rows = select_family(pts, families, fo);
    std::map<CurveFamily, FamilySelectionRow> by;
    for (const auto& r : rows) by[r.family] = r;
    const auto& e3 = by[CurveFamily::kExp3_1];
    const bool ok = e3.e_l2 <= by[CurveFamily::kIlog2].e_l2 && e3.preq <= by[CurveFamily::kExp4].preq;
    agree += ok ? 1 : 0;
    if (!ok) misses += " " + std::to_string(seed);
  }
  return {agree >= 8, "EXP3 preferred in " + std::to_string(agree) + "/10 seeds" +
                          (misses.empty() ? "" : " (missed:" + misses + ")")};
}

// ------------------------------------------------------ desk pipeline runs

const fs::path kDesk = fs::path(MTLC_CONFIG_DIR) / "desk.json";

struct DeskRuns {
  bool ok = false;
  fs::path serial, parallel, resumed;
  double pipeline_seconds = 0.0;
  std::string error;
};

int cli(const std::string& command, const fs::path& out, int parallelism, std::size_t max_jobs = 0,
        bool resume = false) {
  cli::CliOptions o;
  o.command = command;
  o.config = kDesk;
  o.out = out;
  o.parallelism = parallelism;
  o.max_jobs = max_jobs;
  o.resume = resume;
  return cli::run_command(o);
}

// Runs the desk pipeline once at full width (timed) and once serially, and
// an interrupted-then-resumed grid. Shared by criteria 8 to 10.
const DeskRuns& desk_runs() {
  static DeskRuns runs = [] {
    DeskRuns r;
    r.parallel = scratch("desk_parallel");
    r.serial = scratch("desk_serial");
    r.resumed = scratch("desk_resumed");
    const auto t0 = Clock::now();
    if (cli("pipeline", r.parallel, std::max(4, workers())) != cli::kExitOk) {
      r.error = "pipeline failed";
      return r;
    }
    r.pipeline_seconds = seconds_since(t0);
    if (cli("pipeline", r.serial, 1) != cli::kExitOk) {
      r.error = "serial pipeline failed";
      return r;
    }
    const bool staged = cli("synth", r.resumed, 1) == cli::kExitOk && cli("split", r.resumed, 1) == cli::kExitOk &&
                        cli("grid", r.resumed, 2, 60) == cli::kExitOk && !fs::exists(r.resumed / "grid.csv") &&
                        cli("grid", r.resumed, 3, 0, true) == cli::kExitOk;
    if (!staged) {
      r.error = "interrupted grid did not resume";
      return r;
    }
    r.ok = true;
    return r;
  }();
  return runs;
}

// ---------------------------------------------------------------- 8

Outcome forecast_calibration() {
  const DeskRuns& runs = desk_runs();
  if (!runs.ok) return {false, runs.error};
  const auto obs = parse_grid_csv(read_file(runs.parallel / "grid.csv"));
  const auto avg = average_over_shifts(obs);
  const auto fits = parse_fits_csv(read_file(runs.parallel / "fits_auroc.csv"));
  int m_max = 0;
  std::size_t K = 0;
  for (const auto& o : avg) {
    m_max = std::max(m_max, o.key.m);
    K = std::max(K, o.records.size());
  }
  const int m = m_max - 1;
  int within = 0, total = 0;
  double worst = 0.0;
  for (const auto& f : fits) {
    const auto i = static_cast<std::size_t>(f.target_task);
    const GridRecord* ref = find_record(avg, GridKind::kMtl, m, i);
    const GridRecord* aug = find_record(avg, GridKind::kStag, m, i, -1, static_cast<int>(i));
    ++total;
    if (!ref || !aug || !ref->auroc || !aug->auroc) continue;
    const ParamSet& p = f.stage2.params;
    const double predicted = eval_curve(CurveFamily::kExp3_2, p, {aug->n_t, aug->n_sigma, 0}) -
                             eval_curve(CurveFamily::kExp3_2, p, {ref->n_t, ref->n_sigma, 0});
    const double actual = *aug->auroc - *ref->auroc;
    worst = std::max(worst, std::abs(predicted - actual));
    within += std::abs(predicted - actual) <= 0.05 ? 1 : 0;
  }
  const bool pass = total == static_cast<int>(K) && 4 * within >= 3 * total;
  return {pass, std::to_string(within) + "/" + std::to_string(total) + " tasks within 0.05 at m=" + std::to_string(m) +
                    ", largest error " + fmt(worst)};
}

// ---------------------------------------------------------------- 9

Outcome determinism() {
  const DeskRuns& runs = desk_runs();
  if (!runs.ok) return {false, runs.error};
  std::vector<std::string> mismatched;
  std::size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(runs.serial)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".csv") continue;
    const fs::path rel = fs::relative(entry.path(), runs.serial);
    ++compared;
    if (!fs::exists(runs.parallel / rel) || read_file(entry.path()) != read_file(runs.parallel / rel)) {
      mismatched.push_back(rel.string());
    }
  }
  const bool resumed = read_file(runs.resumed / "grid.csv") == read_file(runs.serial / "grid.csv");
  std::string detail = std::to_string(compared) + " CSVs compared across parallelism, " +
                       std::to_string(mismatched.size()) + " differ; resumed grid " +
                       (resumed ? "identical" : "DIFFERS");
  for (const auto& m : mismatched) detail += " " + m;
  return {compared >= 10 && mismatched.empty() && resumed, detail};
}

// ---------------------------------------------------------------- 10

Outcome end_to_end_budget() {
  const DeskRuns& runs = desk_runs();
  if (!runs.ok) return {false, runs.error};
  return {runs.pipeline_seconds < 20 * 60, "desk pipeline " + fmt(runs.pipeline_seconds, 1) + " s on " +
                                               std::to_string(workers()) + " hardware thread(s)"};
}

}  // namespace
}  // namespace mtlc

int main(int argc, char** argv) {
  using namespace mtlc;
  spdlog::set_level(spdlog::level::warn);
  const std::vector<Criterion> all = {
      {1, "curve round trip", curve_round_trip},
      {2, "Jacobian exactness", jacobian_exactness},
      {3, "metric oracles", metric_oracles},
      {4, "learner correctness", learner_correctness},
      {5, "MTL benefit detection", mtl_benefit},
      {6, "transfer decomposition validity", transfer_decomposition},
      {7, "family selection sanity", family_selection},
      {8, "gain forecast calibration", forecast_calibration},
      {9, "determinism and resumability", determinism},
      {10, "end-to-end budget", end_to_end_budget},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
