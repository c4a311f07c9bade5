// SPDX-License-Identifier: Apache-2.0
#include "mtlc/fitter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include "mtlc/error.hpp"
#include "mtlc/hash.hpp"

namespace mtlc {

namespace {

constexpr double kAlphaMin = 1e-6;
constexpr double kAlphaMax = 4.0;

constexpr std::size_t idx(Param p) { return static_cast<std::size_t>(p); }

double argument_of(Param p, const CurveArgs& a) {
  switch (p) {
    case Param::kAi: return a.n_t;
    case Param::kAij: return a.n_aux;
    case Param::kAsigma: return a.n_sigma;
    default: return 1.0;
  }
}

std::vector<FitPoint> usable_points(std::span<const FitPoint> points, CurveFamily family,
                                    const ParamSet& params) {
  std::vector<FitPoint> out;
  out.reserve(points.size());
  std::size_t dropped = 0;
  for (const FitPoint& pt : points) {
    if (!std::isfinite(pt.value) || !(pt.weight >= 0.0)) {
      throw DomainError("fit point value must be finite and weight non-negative");
    }
    if (family == CurveFamily::kIlog2 && !(pt.args.n_t / params.n_scale > 1.0)) {
      ++dropped;
      continue;
    }
    check_args(family, params, pt.args);
    out.push_back(pt);
  }
  if (dropped > 0) {
    spdlog::warn("ILOG2: excluded {} point(s) with scaled n_t <= 1", dropped);
  }
  return out;
}

struct LmOutcome {
  ParamSet params;
  double sse = std::numeric_limits<double>::infinity();
  bool converged = false;
};

class LmSolver {
 public:
  LmSolver(std::span<const FitPoint> points, CurveFamily family, std::vector<Param> free,
           const FitOptions& opts)
      : points_(points), family_(family), free_(std::move(free)), opts_(opts) {}

  LmOutcome run(ParamSet x, std::vector<double>* trace) const {
    const auto m = static_cast<Eigen::Index>(points_.size());
    const auto p = static_cast<Eigen::Index>(free_.size());
    Eigen::MatrixXd jac(m, p);
    Eigen::VectorXd res(m);

    LmOutcome out;
    double sse = weighted_sse(points_, family_, x);
    double lambda = 1e-3;
    for (int iter = 0; iter < opts_.max_iter; ++iter) {
      if (sse == 0.0) {
        out.converged = true;
        break;
      }
      linearize(x, jac, res);
      if (!jac.allFinite() || !res.allFinite()) {
        throw NonFinite("Jacobian or residual not finite; check n_scale");
      }
      const Eigen::MatrixXd jtj = jac.transpose() * jac;
      const Eigen::VectorXd grad = jac.transpose() * res;
      Eigen::VectorXd diag = jtj.diagonal().cwiseMax(1e-12);

      bool accepted = false;
      bool stop = false;
      while (!accepted && !stop) {
        Eigen::MatrixXd damped = jtj;
        damped.diagonal() += lambda * diag;
        const Eigen::VectorXd delta = damped.ldlt().solve(-grad);

        ParamSet trial = x;
        for (Eigen::Index k = 0; k < p; ++k) {
          trial.set(free_[k], x.get(free_[k]) + (std::isfinite(delta[k]) ? delta[k] : 0.0));
        }
        project_free(trial, x);
        double step_sq = 0.0;
        for (Param q : free_) step_sq += std::pow(trial.get(q) - x.get(q), 2);
        if (std::sqrt(step_sq) < opts_.step_tol) {
          out.converged = true;
          stop = true;
          break;
        }
        const double trial_sse = weighted_sse(points_, family_, trial);
        if (std::isfinite(trial_sse) && trial_sse <= sse) {
          const double rel = (sse - trial_sse) / std::max(sse, std::numeric_limits<double>::min());
          x = trial;
          sse = trial_sse;
          accepted = true;
          lambda = std::max(lambda * 0.1, 1e-15);
          if (trace) trace->push_back(sse);
          if (rel < opts_.rel_sse_tol || sse == 0.0) {
            out.converged = true;
            stop = true;
          }
        } else {
          lambda *= 10.0;
          if (lambda > 1e20) stop = true;
        }
      }
      if (stop) break;
    }
    out.params = x;
    out.sse = sse;
    return out;
  }

 private:
  void project_free(ParamSet& trial, const ParamSet& ref) const {
    ParamSet projected = trial;
    project_to_bounds(projected);
    trial = ref;
    for (Param q : free_) trial.set(q, projected.get(q));
  }

  void linearize(const ParamSet& x, Eigen::MatrixXd& jac, Eigen::VectorXd& res) const {
    std::array<double, kParamCount> g{};
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const FitPoint& pt = points_[i];
      const double sw = std::sqrt(pt.weight);
      const double f = eval_with_full_grad(family_, x, pt.args, g);
      const auto row = static_cast<Eigen::Index>(i);
      res[row] = sw * (f - pt.value);
      for (std::size_t k = 0; k < free_.size(); ++k) {
        jac(row, static_cast<Eigen::Index>(k)) = sw * g[idx(free_[k])];
      }
    }
  }

  std::span<const FitPoint> points_;
  CurveFamily family_;
  std::vector<Param> free_;
  const FitOptions& opts_;
};

// Log-normal restarts: rate coefficients and alpha are scaled by exp(sigma z)
// (near-zero rates get an additive kick instead), b is shifted by sigma z so
// the gap exp(b) is scaled log-normally, and c moves by a fraction of sigma.
ParamSet perturb(const ParamSet& base, const std::vector<Param>& free,
                 std::span<const FitPoint> points, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  ParamSet out = base;
  for (Param p : free) {
    const double z = normal(rng);
    const double v = base.get(p);
    switch (p) {
      case Param::kB: out.b = v + sigma * z; break;
      case Param::kC: out.c = v + 0.1 * sigma * z; break;
      case Param::kAlpha: out.alpha = v * std::exp(sigma * z); break;
      default: {
        if (std::abs(v) > 1e-3) {
          out.set(p, v * std::exp(sigma * z));
        } else {
          double max_arg = 0.0;
          for (const FitPoint& pt : points) {
            max_arg = std::max(max_arg, argument_of(p, pt.args) / base.n_scale);
          }
          out.set(p, v + sigma * z / std::max(1.0, max_arg));
        }
      }
    }
  }
  project_to_bounds(out);
  return out;
}

}  // namespace

void project_to_bounds(ParamSet& p) noexcept {
  p.c = std::clamp(p.c, 0.0, 1.0);
  p.a_i = std::max(p.a_i, 0.0);
  p.alpha = std::clamp(p.alpha, kAlphaMin, kAlphaMax);
}

double weighted_sse(std::span<const FitPoint> points, CurveFamily family, const ParamSet& params) {
  std::array<double, kParamCount> g{};
  double sse = 0.0;
  for (const FitPoint& pt : points) {
    const double r = eval_with_full_grad(family, params, pt.args, g) - pt.value;
    sse += pt.weight * r * r;
  }
  return std::isfinite(sse) ? sse : std::numeric_limits<double>::infinity();
}

FitResult fit_curve(std::span<const FitPoint> points, CurveFamily family, const ParamSet& init,
                    const FreezeMask& freeze, const FitOptions& opts) {
  ParamSet start = init;
  start.frozen = freeze;
  const std::vector<FitPoint> pts = usable_points(points, family, start);
  const std::vector<Param> free = free_params(family, start);

  if (pts.size() < free.size()) {
    throw UnderDetermined(std::to_string(pts.size()) + " point(s) for " +
                          std::to_string(free.size()) + " free parameter(s) of " +
                          std::string(family_name(family)));
  }
  for (Param p : free) {
    if (p != Param::kAi && p != Param::kAij && p != Param::kAsigma) continue;
    const bool any = std::any_of(pts.begin(), pts.end(),
                                 [&](const FitPoint& pt) { return argument_of(p, pt.args) != 0.0; });
    if (!any) {
      throw UnderDetermined("argument of " + std::string(param_name(p)) +
                            " is zero at every point");
    }
  }

  // Frozen values must come back bit-identical, so projection only touches
  // the free coordinates.
  ParamSet projected = start;
  project_to_bounds(projected);
  for (Param p : free) start.set(p, projected.get(p));

  if (!std::isfinite(weighted_sse(pts, family, start))) {
    throw NonFinite("residuals at the initial parameters are not finite");
  }

  LmSolver solver(pts, family, free, opts);
  FitResult best;
  best.n_points = pts.size();

  auto run_start = [&](const ParamSet& x0) {
    std::vector<double>* trace = nullptr;
    if (opts.sse_trace) {
      opts.sse_trace->emplace_back();
      trace = &opts.sse_trace->back();
    }
    LmOutcome o = solver.run(x0, trace);
    ++best.restarts_used;
    if (best.restarts_used == 1 || o.sse < best.sse) {
      best.params = o.params;
      best.sse = o.sse;
      best.converged = o.converged;
    }
  };

  run_start(start);
  std::mt19937_64 rng(opts.seed);
  for (int r = 0; r < opts.restarts && !free.empty(); ++r) {
    ParamSet x0 = perturb(start, free, pts, opts.perturb_sigma, rng);
    for (std::size_t i = 0; i < kParamCount; ++i) {
      if (!x0.is_frozen(kAllParams[i])) continue;
      x0.set(kAllParams[i], start.get(kAllParams[i]));
    }
    if (!std::isfinite(weighted_sse(pts, family, x0))) continue;
    run_start(x0);
  }
  best.params.frozen = freeze;
  return best;
}

ParamSet init_heuristic(std::span<const FitPoint> points, CurveFamily family) {
  std::vector<const FitPoint*> pts;
  for (const FitPoint& pt : points) {
    if (family == CurveFamily::kIlog2 && !(pt.args.n_t > 1.0)) continue;
    pts.push_back(&pt);
  }
  std::set<double> distinct;
  for (const FitPoint* pt : pts) distinct.insert(pt->args.n_t);
  if (distinct.size() < 2) {
    throw UnderDetermined("heuristic init needs at least 2 points with distinct n_t");
  }
  const double n_min = *distinct.begin();
  const double n_max = *distinct.rbegin();

  double v_top = -std::numeric_limits<double>::infinity();
  double sum_min = 0.0, sum_max = 0.0;
  int cnt_min = 0, cnt_max = 0;
  for (const FitPoint* pt : pts) {
    v_top = std::max(v_top, pt->value);
    if (pt->args.n_t == n_min) sum_min += pt->value, ++cnt_min;
    if (pt->args.n_t == n_max) sum_max += pt->value, ++cnt_max;
  }
  const double v_min = sum_min / cnt_min;
  const double v_max = sum_max / cnt_max;

  ParamSet p;
  p.c = std::min(v_top + 0.01, 1.0);
  const double gap_min = std::max(p.c - v_min, 1e-6);
  const double gap_max = std::max(p.c - v_max, 1e-6);
  p.b = std::log(gap_min);
  p.alpha = 1.0;
  if (family == CurveFamily::kIlog2) {
    p.n_scale = 1.0;
    const double denom = 1.0 / std::log(n_min) - 1.0 / std::log(n_max);
    p.a_i = std::max(0.0, (v_max - v_min) / denom);
  } else {
    p.n_scale = n_max;
    p.a_i = std::max(0.0, (std::log(gap_min) - std::log(gap_max)) / ((n_max - n_min) / n_max));
  }
  return p;
}

StagedFit fit_staged(std::span<const FitPoint> stl, std::span<const FitPoint> mtl,
                     const std::map<int, std::vector<FitPoint>>& stag, int target,
                     const FitOptions& opts) {
  StagedFit out;
  out.target_task = target;
  const auto task_seed = static_cast<std::uint64_t>(target);

  FitOptions o1 = opts;
  o1.seed = derive_seed(opts.seed, {task_seed, 1});
  const ParamSet init1 = init_heuristic(stl, CurveFamily::kExp3_1);
  out.stage1 = fit_curve(stl, CurveFamily::kExp3_1, init1, FreezeMask{}, o1);

  FreezeMask freeze_ai{};
  freeze_ai[idx(Param::kAi)] = true;
  FitOptions o2 = opts;
  o2.seed = derive_seed(opts.seed, {task_seed, 2});
  ParamSet init2 = init_heuristic(mtl, CurveFamily::kExp3_2);
  init2.n_scale = out.stage1.params.n_scale;
  init2.a_i = out.stage1.params.a_i;
  init2.a_sigma = 0.0;
  out.stage2 = fit_curve(mtl, CurveFamily::kExp3_2, init2, freeze_ai, o2);

  FreezeMask freeze_ai_sigma = freeze_ai;
  freeze_ai_sigma[idx(Param::kAsigma)] = true;
  for (const auto& [aux, aux_points] : stag) {
    try {
      std::map<int, std::set<double>> aux_counts;
      for (const FitPoint& pt : aux_points) aux_counts[pt.fold_count].insert(pt.args.n_aux);
      const bool contrast = std::any_of(aux_counts.begin(), aux_counts.end(),
                                        [](const auto& kv) { return kv.second.size() > 1; });
      if (!contrast) throw UnderDetermined("auxiliary " + std::to_string(aux) + " adds no labels at any fold count");
      FitOptions o3 = opts;
      o3.seed = derive_seed(opts.seed, {task_seed, 3, static_cast<std::uint64_t>(aux)});
      ParamSet init3 = out.stage2.params;
      init3.a_ij = 0.0;
      out.stage3.emplace(aux, fit_curve(aux_points, CurveFamily::kExp3_3, init3, freeze_ai_sigma, o3));
    } catch (const Error& e) {
      out.stage3_failures.emplace(aux, e.what());
    }
  }
  return out;
}

double prequential_error(std::span<const FitPoint> points, CurveFamily family,
                         const FitOptions& opts) {
  const std::size_t p = family_params(family).size();
  std::set<int> fold_set;
  for (const FitPoint& pt : points) fold_set.insert(pt.fold_count);
  const std::vector<int> folds(fold_set.begin(), fold_set.end());
  if (folds.size() < p + 1) {
    throw UnderDetermined("prequential error needs " + std::to_string(p + 1) +
                          " distinct fold counts, got " + std::to_string(folds.size()));
  }
  double total = 0.0;
  for (std::size_t k = p - 1; k + 1 < folds.size(); ++k) {
    std::vector<FitPoint> history;
    std::vector<FitPoint> next;
    for (const FitPoint& pt : points) {
      if (pt.fold_count <= folds[k]) history.push_back(pt);
      if (pt.fold_count == folds[k + 1]) next.push_back(pt);
    }
    FitOptions o = opts;
    o.seed = derive_seed(opts.seed, {static_cast<std::uint64_t>(folds[k])});
    const ParamSet init = init_heuristic(history, family);
    const FitResult fit = fit_curve(history, family, init, FreezeMask{}, o);
    for (const FitPoint& pt : next) {
      if (family == CurveFamily::kIlog2 && !(pt.args.n_t / fit.params.n_scale > 1.0)) continue;
      const double r = eval_curve(family, fit.params, pt.args) - pt.value;
      total += pt.weight * r * r;
    }
  }
  return total;
}

std::vector<FitPoint> average_points(const PointsByShift& points, std::size_t task) {
  std::map<int, std::pair<FitPoint, int>> acc;
  for (const auto& shift : points) {
    if (task >= shift.size()) continue;
    for (const FitPoint& pt : shift[task]) {
      auto [it, inserted] = acc.try_emplace(pt.fold_count, FitPoint{}, 0);
      FitPoint& a = it->second.first;
      a.args.n_t += pt.args.n_t;
      a.args.n_sigma += pt.args.n_sigma;
      a.args.n_aux += pt.args.n_aux;
      a.value += pt.value;
      a.weight += pt.weight;
      ++it->second.second;
    }
  }
  std::vector<FitPoint> out;
  for (auto& [fold, entry] : acc) {
    auto [a, n] = entry;
    a.args.n_t /= n;
    a.args.n_sigma /= n;
    a.args.n_aux /= n;
    a.value /= n;
    a.weight /= n;
    a.fold_count = fold;
    out.push_back(a);
  }
  return out;
}

std::vector<FamilySelectionRow> select_family(const PointsByShift& points,
                                              std::span<const CurveFamily> families,
                                              const FitOptions& opts) {
  std::size_t n_tasks = 0;
  for (const auto& shift : points) n_tasks = std::max(n_tasks, shift.size());

  auto l2_of = [&](std::span<const FitPoint> pts, CurveFamily family, std::uint64_t seed) {
    FitOptions o = opts;
    o.seed = seed;
    return fit_curve(pts, family, init_heuristic(pts, family), FreezeMask{}, o).sse;
  };
  auto preq_of = [&](std::span<const FitPoint> pts, CurveFamily family, std::uint64_t seed) {
    FitOptions o = opts;
    o.seed = seed;
    return prequential_error(pts, family, o);
  };

  std::vector<FamilySelectionRow> table;
  for (CurveFamily family : families) {
    FamilySelectionRow row;
    row.family = family;
    row.n_tasks = n_tasks;

    // Per permutation: mean over tasks that fit, then mean over permutations.
    auto per_shift = [&](auto&& measure, std::size_t& excluded) {
      double sum = 0.0;
      int shifts_used = 0;
      for (std::size_t s = 0; s < points.size(); ++s) {
        double task_sum = 0.0;
        int ok = 0;
        for (std::size_t t = 0; t < points[s].size(); ++t) {
          try {
            task_sum += measure(points[s][t], family, derive_seed(opts.seed, {s, t}));
            ++ok;
          } catch (const Error&) {
            ++excluded;
          }
        }
        if (ok > 0) {
          sum += task_sum / ok;
          ++shifts_used;
        }
      }
      return shifts_used ? sum / shifts_used : std::numeric_limits<double>::quiet_NaN();
    };
    auto averaged = [&](auto&& measure, std::size_t& excluded) {
      double sum = 0.0;
      int ok = 0;
      for (std::size_t t = 0; t < n_tasks; ++t) {
        try {
          const auto avg = average_points(points, t);
          sum += measure(avg, family, derive_seed(opts.seed, {t}));
          ++ok;
        } catch (const Error&) {
          ++excluded;
        }
      }
      return ok ? sum / ok : std::numeric_limits<double>::quiet_NaN();
    };

    row.l2 = per_shift(l2_of, row.excluded_l2);
    row.e_l2 = averaged(l2_of, row.excluded_e_l2);
    row.preq = per_shift(preq_of, row.excluded_preq);
    row.e_preq = averaged(preq_of, row.excluded_e_preq);
    table.push_back(row);
  }
  return table;
}

}  // namespace mtlc
