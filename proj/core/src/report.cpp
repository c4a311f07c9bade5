// SPDX-License-Identifier: Apache-2.0
#include "mtlc/report.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "mtlc/csv.hpp"
#include "mtlc/error.hpp"
#include "mtlc/hash.hpp"
#include "parallel.hpp"

namespace mtlc {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string num(double v) { return std::isfinite(v) ? format_double(v) : std::string(); }

// Markdown renders with fixed precision; the CSV twin carries exact values.
std::string md_num(double v, int digits = 4) {
  if (!std::isfinite(v)) return "-";
  std::ostringstream out;
  out.precision(digits);
  if (v != 0.0 && (std::abs(v) < 1e-3 || std::abs(v) >= 1e5)) {
    out << std::scientific << v;
  } else {
    out << std::fixed << v;
  }
  return out.str();
}

std::string md_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream out;
  out << '|';
  for (const auto& h : header) out << ' ' << h << " |";
  out << "\n|";
  for (std::size_t i = 0; i < header.size(); ++i) out << "---|";
  out << '\n';
  for (const auto& row : rows) {
    out << '|';
    for (const auto& cell : row) out << ' ' << cell << " |";
    out << '\n';
  }
  return out.str();
}

int max_mtl_m(const std::vector<GridObservation>& obs) {
  int m = 0;
  for (const auto& o : obs) {
    if (o.key.kind == GridKind::kMtl) m = std::max(m, o.key.m);
  }
  return m;
}

const GridRecord* find_record(const std::vector<GridObservation>& obs, GridKind kind, int m, int target,
                              std::size_t task) {
  for (const auto& o : obs) {
    if (o.key.kind != kind || o.key.m != m) continue;
    if (kind == GridKind::kStl && o.key.target_task != target) continue;
    for (const auto& r : o.records) {
      if (r.task == task) return &r;
    }
  }
  return nullptr;
}

double metric_of(const GridRecord& r, Metric metric) {
  return metric == Metric::kAuroc ? *r.auroc : *r.aupr;
}

CorrelationRow correlate(std::string variant, std::string metric, std::string quantity,
                         const std::vector<double>& x, const std::vector<double>& y) {
  CorrelationRow row{std::move(variant), std::move(metric), std::move(quantity), std::nullopt, "ok"};
  if (x.size() < 3) {
    row.status = "InsufficientPairs";
    return row;
  }
  try {
    row.corr = spearman(x, y);
  } catch (const Error& e) {
    row.status = std::string(to_string(e.code()));
  }
  return row;
}

std::string correlations_markdown(const std::string& title, const std::vector<CorrelationRow>& rows) {
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    cells.push_back({r.variant, r.metric, r.quantity, r.corr ? md_num(r.corr->r, 3) : "-",
                     r.corr ? md_num(r.corr->p, 3) : "-", r.corr ? std::to_string(r.corr->n) : "-",
                     r.status});
  }
  return "# " + title + "\n\n" +
         md_table({"variant", "metric", "quantity", "spearman r", "p", "n", "status"}, cells);
}

}  // namespace

GridFits fit_grid(const std::vector<GridObservation>& averaged, std::size_t K, Metric metric,
                  const FitOptions& opts, int parallelism) {
  FitOptions base = opts;
  base.seed = derive_seed(opts.seed, {static_cast<std::uint64_t>(metric)});
  std::vector<std::optional<StagedFit>> fits(K);
  std::vector<std::vector<FitFailure>> failures(K);

  detail::parallel_for(K, parallelism, [&](std::size_t t) {
    const int ti = static_cast<int>(t);
    const auto stl = fit_points(averaged, GridKind::kStl, t, metric);
    const auto mtl = fit_points(averaged, GridKind::kMtl, t, metric);
    std::map<int, std::vector<FitPoint>> stag;
    for (std::size_t j = 0; j < K; ++j) {
      if (j == t) continue;
      auto pts = fit_points(averaged, GridKind::kStag, t, metric, static_cast<int>(j));
      if (!pts.empty()) stag.emplace(static_cast<int>(j), std::move(pts));
    }
    try {
      StagedFit f = fit_staged(stl, mtl, stag, ti, base);
      for (const auto& [aux, reason] : f.stage3_failures) failures[t].push_back({ti, 3, aux, reason});
      fits[t] = std::move(f);
    } catch (const Error& e) {
      int stage = 2;
      try {
        fit_curve(stl, CurveFamily::kExp3_1, init_heuristic(stl, CurveFamily::kExp3_1), FreezeMask{},
                  FitOptions{.restarts = 0});
      } catch (const Error&) {
        stage = 1;
      }
      failures[t].push_back({ti, stage, -1, e.what()});
    }
  });

  GridFits out;
  for (std::size_t t = 0; t < K; ++t) {
    if (fits[t]) out.fits.push_back(std::move(*fits[t]));
    out.failures.insert(out.failures.end(), failures[t].begin(), failures[t].end());
  }
  return out;
}

std::string fits_to_csv(const std::vector<StagedFit>& fits) {
  CsvTable table;
  table.header = {"task_id", "stage", "aux_task_id"};
  table.header.insert(table.header.end(), kParamSetColumns.begin(), kParamSetColumns.end());
  table.header.insert(table.header.end(), {"sse", "n_points", "converged"});
  auto add = [&](int task, int stage, int aux, CurveFamily family, const FitResult& r) {
    std::vector<std::string> row{std::to_string(task), std::to_string(stage), std::to_string(aux)};
    const auto params = serialize_params(family, r.params);
    row.insert(row.end(), params.begin(), params.end());
    row.insert(row.end(), {format_double(r.sse), std::to_string(r.n_points), r.converged ? "1" : "0"});
    table.rows.push_back(std::move(row));
  };
  for (const StagedFit& f : fits) {
    add(f.target_task, 1, -1, CurveFamily::kExp3_1, f.stage1);
    add(f.target_task, 2, -1, CurveFamily::kExp3_2, f.stage2);
    for (const auto& [aux, r] : f.stage3) add(f.target_task, 3, aux, CurveFamily::kExp3_3, r);
  }
  return to_csv(table);
}

std::vector<StagedFit> parse_fits_csv(std::string_view text) {
  const CsvTable table = parse_csv(text);
  const std::size_t ct = table.require_column("task_id"), cs = table.require_column("stage"),
                    ca = table.require_column("aux_task_id"), csse = table.require_column("sse"),
                    cn = table.require_column("n_points"), cc = table.require_column("converged");
  std::vector<std::size_t> pcols;
  for (auto name : kParamSetColumns) pcols.push_back(table.require_column(name));

  std::map<int, StagedFit> by_task;
  for (const auto& row : table.rows) {
    const int task = static_cast<int>(parse_int(row[ct]));
    const int stage = static_cast<int>(parse_int(row[cs]));
    const int aux = static_cast<int>(parse_int(row[ca]));
    std::vector<std::string> fields;
    for (std::size_t c : pcols) fields.push_back(row[c]);
    FitResult r;
    r.params = parse_params(fields).second;
    r.sse = parse_double(row[csse]);
    r.n_points = static_cast<std::size_t>(parse_int(row[cn]));
    r.converged = row[cc] == "1";
    StagedFit& f = by_task[task];
    f.target_task = task;
    switch (stage) {
      case 1: f.stage1 = r; break;
      case 2: f.stage2 = r; break;
      case 3: f.stage3[aux] = r; break;
      default: throw ParseError("fit stage must be 1, 2 or 3, got " + row[cs]);
    }
  }
  std::vector<StagedFit> out;
  for (auto& [task, f] : by_task) out.push_back(std::move(f));
  return out;
}

std::string fit_failures_to_csv(const std::vector<FitFailure>& failures) {
  CsvTable table;
  table.header = {"task_id", "stage", "aux_task_id", "reason"};
  for (const auto& f : failures) {
    table.rows.push_back({std::to_string(f.task), std::to_string(f.stage), std::to_string(f.aux), f.reason});
  }
  return to_csv(table);
}

Report family_selection_report(const std::vector<GridObservation>& observations, std::size_t K,
                               std::span<const CurveFamily> families, const FitOptions& opts) {
  std::map<int, std::vector<GridObservation>> by_shift;
  for (const auto& o : observations) {
    if (o.key.kind == GridKind::kStl) by_shift[o.key.shift].push_back(o);
  }
  CsvTable table;
  table.header = {"metric", "family", "l2", "e_l2", "preq", "e_preq", "excluded_l2",
                  "excluded_e_l2", "excluded_preq", "excluded_e_preq", "n_tasks"};
  std::vector<std::vector<std::string>> md;
  for (Metric metric : {Metric::kAuroc, Metric::kAupr}) {
    PointsByShift points;
    for (const auto& [shift, obs] : by_shift) {
      std::vector<std::vector<FitPoint>> per_task;
      for (std::size_t t = 0; t < K; ++t) per_task.push_back(fit_points(obs, GridKind::kStl, t, metric));
      points.push_back(std::move(per_task));
    }
    FitOptions o = opts;
    o.seed = derive_seed(opts.seed, {static_cast<std::uint64_t>(metric), 7});
    for (const FamilySelectionRow& r : select_family(points, families, o)) {
      const std::string m(metric_name(metric)), fam(family_name(r.family));
      table.rows.push_back({m, fam, num(r.l2), num(r.e_l2), num(r.preq), num(r.e_preq),
                            std::to_string(r.excluded_l2), std::to_string(r.excluded_e_l2),
                            std::to_string(r.excluded_preq), std::to_string(r.excluded_e_preq),
                            std::to_string(r.n_tasks)});
      md.push_back({m, fam, md_num(r.l2), md_num(r.e_l2), md_num(r.preq), md_num(r.e_preq),
                    std::to_string(r.excluded_l2) + "/" + std::to_string(r.excluded_e_l2) + "/" +
                        std::to_string(r.excluded_preq) + "/" + std::to_string(r.excluded_e_preq)});
    }
  }
  Report rep;
  rep.csv = to_csv(table);
  rep.markdown = "# Learning-curve family selection\n\nSingle-task grid points. L2 and preq are "
                 "per-shift task means averaged over shifts; E[.] columns use shift-averaged points. "
                 "Excluded counts are task fits that failed (L2/E[L2]/preq/E[preq]).\n\n" +
                 md_table({"metric", "family", "L2", "E[L2]", "preq", "E[preq]", "excluded"}, md);
  return rep;
}

std::string correlations_to_csv(const std::vector<CorrelationRow>& rows) {
  CsvTable table;
  table.header = {"variant", "metric", "quantity", "spearman_r", "p_value", "n", "status"};
  for (const auto& r : rows) {
    table.rows.push_back({r.variant, r.metric, r.quantity, r.corr ? format_double(r.corr->r) : "",
                          r.corr ? format_double(r.corr->p) : "", r.corr ? std::to_string(r.corr->n) : "",
                          r.status});
  }
  return to_csv(table);
}

Report stl_vs_mtl_report(const GridFits& auroc, const GridFits& aupr,
                         const std::vector<GridObservation>& averaged, std::size_t K,
                         const FitOptions& opts) {
  const int m_max = max_mtl_m(averaged);
  CsvTable scatter;
  scatter.header = {"metric", "task", "a_st", "a_mt", "b_st", "b_mt", "c_st", "c_mt", "delta_a",
                    "delta_b", "delta_c", "value_st", "value_mt", "delta_value"};
  std::vector<CorrelationRow> rows;

  for (const auto& [metric, fits] : {std::pair{Metric::kAuroc, &auroc}, std::pair{Metric::kAupr, &aupr}}) {
    std::vector<double> da, db, dc, dv;
    for (const StagedFit& f : fits->fits) {
      const auto t = static_cast<std::size_t>(f.target_task);
      if (t >= K) continue;
      const GridRecord* st = find_record(averaged, GridKind::kStl, m_max, f.target_task, t);
      const GridRecord* mt = find_record(averaged, GridKind::kMtl, m_max, -1, t);
      if (!st || !mt || !st->defined || !mt->defined) continue;
      std::vector<FitPoint> pts = fit_points(averaged, GridKind::kMtl, t, metric);
      for (auto& p : pts) p.args.n_sigma = 0.0;
      FitResult mt_fit;
      try {
        FitOptions o = opts;
        o.seed = derive_seed(opts.seed, {static_cast<std::uint64_t>(metric), t, 11});
        mt_fit = fit_curve(pts, CurveFamily::kExp3_1, init_heuristic(pts, CurveFamily::kExp3_1),
                           FreezeMask{}, o);
      } catch (const Error&) {
        continue;
      }
      const ParamSet& ps = f.stage1.params;
      const ParamSet& pm = mt_fit.params;
      const double vs = metric_of(*st, metric), vm = metric_of(*mt, metric);
      da.push_back(pm.a_i - ps.a_i);
      db.push_back(pm.b - ps.b);
      dc.push_back(pm.c - ps.c);
      dv.push_back(vm - vs);
      scatter.rows.push_back({std::string(metric_name(metric)), std::to_string(t), format_double(ps.a_i),
                              format_double(pm.a_i), format_double(ps.b), format_double(pm.b),
                              format_double(ps.c), format_double(pm.c), format_double(da.back()),
                              format_double(db.back()), format_double(dc.back()), format_double(vs),
                              format_double(vm), format_double(dv.back())});
    }
    if (dv.size() < 3) {
      throw InsufficientTasks(std::to_string(dv.size()) + " task(s) with defined " +
                              std::string(metric_name(metric)) + " values; need 3");
    }
    const std::string m(metric_name(metric));
    rows.push_back(correlate("max-fold", m, "a", da, dv));
    rows.push_back(correlate("max-fold", m, "b", db, dv));
    rows.push_back(correlate("max-fold", m, "c", dc, dv));
  }

  Report rep;
  rep.csv = correlations_to_csv(rows);
  rep.markdown = correlations_markdown("Single-task vs multi-task curve parameters", rows) +
                 "\nDeltas are multi-task minus single-task EXP3_1 parameters against the metric "
                 "difference at fold count " + std::to_string(m_max) + " (shift-averaged).\n";
  rep.extra_csv["scatter"] = to_csv(scatter);
  return rep;
}

std::vector<DecompositionRow> decomposition(const std::vector<StagedFit>& fits) {
  std::vector<DecompositionRow> out;
  for (const StagedFit& f : fits) {
    for (const auto& [aux, r] : f.stage3) {
      DecompositionRow d;
      d.target = f.target_task;
      d.aux = aux;
      d.a_i = r.params.a_i;
      d.a_sigma = r.params.a_sigma;
      d.a_ij = r.params.a_ij;
      d.b_isigma = f.stage2.params.b;
      d.c_isigma = f.stage2.params.c;
      d.b_ij = r.params.b;
      d.c_ij = r.params.c;
      out.push_back(d);
    }
  }
  return out;
}

std::string decomposition_to_csv(const std::vector<DecompositionRow>& rows) {
  CsvTable table;
  table.header = {"target_task", "aux_task", "a_i", "a_sigma", "a_ij", "b_isigma", "b_ij",
                  "c_isigma", "c_ij", "delta_b", "delta_c"};
  for (const auto& d : rows) {
    table.rows.push_back({std::to_string(d.target), std::to_string(d.aux), format_double(d.a_i),
                          format_double(d.a_sigma), format_double(d.a_ij), format_double(d.b_isigma),
                          format_double(d.b_ij), format_double(d.c_isigma), format_double(d.c_ij),
                          format_double(d.delta_b()), format_double(d.delta_c())});
  }
  return to_csv(table);
}

RowMatrix mean_affinity(const std::vector<TagSetting>& settings, std::size_t K, std::optional<int> only_m) {
  const auto Ki = static_cast<Eigen::Index>(K);
  RowMatrix sum = RowMatrix::Zero(Ki, Ki);
  Eigen::MatrixXi n = Eigen::MatrixXi::Zero(Ki, Ki);
  for (const TagSetting& st : settings) {
    if (!st.result || (only_m && st.m != *only_m)) continue;
    const RowMatrix& z = st.result->mean;
    if (z.rows() != Ki) throw ShapeMismatch("TAG matrix size does not match K");
    for (Eigen::Index j = 0; j < Ki; ++j) {
      for (Eigen::Index i = 0; i < Ki; ++i) {
        if (!std::isfinite(z(j, i))) continue;
        sum(j, i) += z(j, i);
        ++n(j, i);
      }
    }
  }
  RowMatrix out = RowMatrix::Constant(Ki, Ki, kNaN);
  for (Eigen::Index j = 0; j < Ki; ++j) {
    for (Eigen::Index i = 0; i < Ki; ++i) {
      if (n(j, i) > 0) out(j, i) = sum(j, i) / n(j, i);
    }
  }
  return out;
}

Report tag_vs_mtlc_report(const std::vector<TagSetting>& tag, const GridFits& auroc, const GridFits& aupr,
                          std::size_t K) {
  const std::vector<std::pair<std::string, RowMatrix>> variants = {
      {"1-fold", mean_affinity(tag, K, 1)}, {"averaged", mean_affinity(tag, K)}};
  std::vector<CorrelationRow> rows;
  std::size_t best_overlap = 0;
  Report rep;
  for (const auto& [metric, fits] : {std::pair{Metric::kAuroc, &auroc}, std::pair{Metric::kAupr, &aupr}}) {
    const std::vector<DecompositionRow> dec = decomposition(fits->fits);
    rep.extra_csv["decomposition_" + std::string(metric_name(metric))] = decomposition_to_csv(dec);
    for (const auto& [variant, z] : variants) {
      std::vector<double> zs, a, b, c;
      for (const auto& d : dec) {
        if (d.target < 0 || d.aux < 0 || static_cast<std::size_t>(d.target) >= K ||
            static_cast<std::size_t>(d.aux) >= K) {
          continue;
        }
        const double v = z(d.aux, d.target);
        if (!std::isfinite(v)) continue;
        zs.push_back(v);
        a.push_back(d.a_ij);
        b.push_back(d.delta_b());
        c.push_back(d.delta_c());
      }
      best_overlap = std::max(best_overlap, zs.size());
      const std::string m(metric_name(metric));
      rows.push_back(correlate(variant, m, "a_ij", zs, a));
      rows.push_back(correlate(variant, m, "b_ij-b_iSigma", zs, b));
      rows.push_back(correlate(variant, m, "c_ij-c_iSigma", zs, c));
    }
  }
  if (best_overlap < 3) {
    throw InsufficientPairs(std::to_string(best_overlap) +
                            " (source, target) pair(s) covered by both TAG and stage-3 fits; need 3");
  }
  rep.csv = correlations_to_csv(rows);
  rep.markdown = correlations_markdown("TAG affinity vs pairwise transfer coefficients", rows) +
                 "\n1-fold: TAG at one training fold (mean over shifts). averaged: mean over every "
                 "(shift, fold count) setting.\n";
  return rep;
}

std::optional<CurveArgs> current_args(const std::vector<GridObservation>& averaged, std::size_t task) {
  const int m = max_mtl_m(averaged);
  const GridRecord* r = find_record(averaged, GridKind::kMtl, m, -1, task);
  if (!r) return std::nullopt;
  return CurveArgs{r->n_t, r->n_sigma, 0.0};
}

std::map<int, std::vector<double>> one_fold_budgets(const std::vector<GridObservation>& averaged,
                                                    std::size_t K) {
  const int m = max_mtl_m(averaged);
  std::map<int, std::vector<double>> out;
  for (std::size_t t = 0; t < K; ++t) {
    const GridRecord* r = find_record(averaged, GridKind::kMtl, m, -1, t);
    if (r && m > 0) out[static_cast<int>(t)] = {r->n_t / m};
  }
  return out;
}

Forecast gain_forecast(const std::vector<StagedFit>& fits, const std::vector<GridObservation>& averaged,
                       std::size_t K, const std::map<int, std::vector<double>>& budgets) {
  Forecast fc;
  std::map<int, const StagedFit*> by_task;
  for (const StagedFit& f : fits) by_task[f.target_task] = &f;
  for (std::size_t t = 0; t < K; ++t) {
    const int ti = static_cast<int>(t);
    const auto fit = by_task.find(ti);
    if (fit == by_task.end()) {
      fc.omitted.emplace_back(ti, "no stage-2 fit");
      continue;
    }
    const auto args = current_args(averaged, t);
    if (!args) {
      fc.omitted.emplace_back(ti, "no multi-task observation");
      continue;
    }
    const auto b = budgets.find(ti);
    if (b == budgets.end()) {
      fc.omitted.emplace_back(ti, "no candidate budget");
      continue;
    }
    const ParamSet& p = fit->second->stage2.params;
    try {
      const double current = eval_curve(CurveFamily::kExp3_2, p, *args);
      for (std::size_t c = 0; c < b->second.size(); ++c) {
        const double budget = b->second[c];
        ForecastRow row;
        row.task = ti;
        row.candidate = static_cast<int>(c);
        row.budget = budget;
        row.n_t = args->n_t;
        row.n_sigma = args->n_sigma;
        row.current = current;
        row.gain = marginal_gain(CurveFamily::kExp3_2, p, *args, budget, GainAxis::kTarget);
        row.predicted = current + row.gain;
        row.gain_per_label = budget > 0.0 ? row.gain / budget : 0.0;
        fc.rows.push_back(row);
      }
    } catch (const Error& e) {
      fc.omitted.emplace_back(ti, e.what());
    }
  }
  // Budgets differ per task, so ranking groups rows by candidate index.
  std::sort(fc.rows.begin(), fc.rows.end(), [](const ForecastRow& a, const ForecastRow& b) {
    if (a.candidate != b.candidate) return a.candidate < b.candidate;
    if (a.gain_per_label != b.gain_per_label) return a.gain_per_label > b.gain_per_label;
    return a.task < b.task;
  });
  for (std::size_t i = 0; i < fc.rows.size(); ++i) {
    const bool first = i == 0 || fc.rows[i - 1].candidate != fc.rows[i].candidate;
    fc.rows[i].rank = first ? 1 : fc.rows[i - 1].rank + 1;
  }
  return fc;
}

Report forecast_report(const Forecast& forecast) {
  CsvTable table;
  table.header = {"candidate", "rank", "task", "budget", "n_t", "n_sigma", "current", "predicted", "gain",
                  "gain_per_label"};
  std::vector<std::vector<std::string>> md;
  for (const auto& r : forecast.rows) {
    table.rows.push_back({std::to_string(r.candidate), std::to_string(r.rank), std::to_string(r.task),
                          format_double(r.budget),
                          format_double(r.n_t), format_double(r.n_sigma), format_double(r.current),
                          format_double(r.predicted), format_double(r.gain), format_double(r.gain_per_label)});
    md.push_back({std::to_string(r.rank), std::to_string(r.task), md_num(r.budget, 6), md_num(r.n_t, 6),
                  md_num(r.current), md_num(r.predicted), md_num(r.gain), md_num(r.gain_per_label)});
  }
  Report rep;
  rep.csv = to_csv(table);
  rep.markdown = "# Gain forecast\n\nMarginal gain of each task's EXP3_2 curve for the candidate "
                 "budget, ranked by gain per added label.\n\n" +
                 md_table({"rank", "task", "budget", "n_t", "current", "predicted", "gain", "gain/label"}, md);
  if (!forecast.omitted.empty()) {
    rep.markdown += "\nOmitted tasks:\n\n";
    for (const auto& [task, reason] : forecast.omitted) {
      rep.markdown += "- task " + std::to_string(task) + ": " + reason + "\n";
    }
  }
  return rep;
}

}  // namespace mtlc
