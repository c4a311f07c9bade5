// SPDX-License-Identifier: Apache-2.0
#include "mtlc/grid.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "mtlc/csv.hpp"
#include "mtlc/error.hpp"
#include "mtlc/hash.hpp"
#include "mtlc/metrics.hpp"

namespace mtlc {

namespace {

std::size_t expected_records(const GridSpecKey& key, std::size_t K) {
  return key.kind == GridKind::kStl ? 1 : K;
}

void append_rows(std::ostream& out, const GridObservation& obs) {
  for (const GridRecord& r : obs.records) {
    write_csv_row(out, {std::to_string(obs.key.shift), std::string(kind_name(obs.key.kind)),
                        std::to_string(obs.key.m), std::to_string(obs.key.target_task),
                        std::to_string(obs.key.aux_task), std::to_string(r.task), format_double(r.n_t),
                        format_double(r.n_sigma), format_double(r.n_aux), format_optional(r.auroc),
                        format_optional(r.aupr), format_double(r.n_test_pos), format_double(r.n_test_neg),
                        r.defined ? "1" : "0", std::to_string(obs.seed), obs.config_hash});
  }
}

std::string header_line() {
  std::ostringstream out;
  write_csv_row(out, std::vector<std::string>(kGridColumns.begin(), kGridColumns.end()));
  return out.str();
}

std::optional<double> optional_field(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return parse_double(s);
}

// Drops a torn final line left by an interrupted append.
std::string complete_lines(std::string text) {
  const auto last = text.find_last_of('\n');
  text.resize(last == std::string::npos ? 0 : last + 1);
  return text;
}

}  // namespace

std::string_view kind_name(GridKind kind) noexcept {
  switch (kind) {
    case GridKind::kStl: return "STL";
    case GridKind::kMtl: return "MTL";
    case GridKind::kStag: return "STAG";
  }
  return "?";
}

GridKind parse_kind(std::string_view name) {
  if (name == "STL") return GridKind::kStl;
  if (name == "MTL") return GridKind::kMtl;
  if (name == "STAG") return GridKind::kStag;
  throw ParseError("unknown grid kind '" + std::string(name) + "'");
}

std::string_view metric_name(Metric metric) noexcept {
  return metric == Metric::kAuroc ? "auroc" : "aupr";
}

std::string GridSpecKey::label() const {
  std::string s = std::string(kind_name(kind)) + "(shift=" + std::to_string(shift) +
                  ", m=" + std::to_string(m);
  if (target_task >= 0) s += ", target=" + std::to_string(target_task);
  if (aux_task >= 0) s += ", aux=" + std::to_string(aux_task);
  return s + ")";
}

std::uint64_t entry_seed(std::uint64_t master_seed, const GridSpecKey& key) {
  GridSpecKey k = key;
  if (k.kind == GridKind::kStag) {
    k.kind = GridKind::kMtl;
    k.aux_task = -1;
  }
  return derive_seed(master_seed, {static_cast<std::uint64_t>(k.shift), static_cast<std::uint64_t>(k.kind),
                                   static_cast<std::uint64_t>(k.m),
                                   static_cast<std::uint64_t>(k.target_task + 1),
                                   static_cast<std::uint64_t>(k.aux_task + 1)});
}

std::string GridPlan::hash() const {
  auto model = [](Fnv1a& h, ModelConfig c) {
    c.seed = 0;
    c.d = 0;
    c.K = 0;
    h.update(c.hash());
  };
  Fnv1a h;
  h.update("grid").update(K).update(static_cast<std::uint64_t>(n_folds));
  h.update(static_cast<std::uint64_t>(m_max)).update(master_seed);
  for (int s : shifts) h.update(static_cast<std::uint64_t>(s));
  model(h, stl);
  model(h, mtl);
  return h.hex();
}

GridPlan plan_grid(std::size_t K, int n_folds, int m_max, std::vector<int> shifts,
                   std::uint64_t master_seed, const ModelConfig& stl, const ModelConfig& mtl) {
  if (K < 1) throw ConfigError("grid: K must be >= 1");
  if (n_folds < 2) throw ConfigError("grid: n_folds must be >= 2");
  if (m_max < 1 || m_max > n_folds - 1) {
    throw ConfigError("grid: m_max must lie in [1, n_folds - 1]");
  }
  if (shifts.empty()) throw ConfigError("grid: at least one shift is required");
  std::set<int> seen;
  for (int s : shifts) {
    if (s < 0 || s >= n_folds) throw ConfigError("grid: shift " + std::to_string(s) + " out of range");
    if (!seen.insert(s).second) throw ConfigError("grid: duplicate shift " + std::to_string(s));
  }

  GridPlan plan;
  plan.K = K;
  plan.n_folds = n_folds;
  plan.m_max = m_max;
  plan.shifts = std::move(shifts);
  plan.master_seed = master_seed;
  plan.stl = stl;
  plan.mtl = mtl;
  const int Ki = static_cast<int>(K);
  for (int s : plan.shifts) {
    for (int m = 1; m <= m_max; ++m) {
      for (int t = 0; t < Ki; ++t) plan.entries.push_back({{s, GridKind::kStl, m, t, -1}, 0});
      plan.entries.push_back({{s, GridKind::kMtl, m, -1, -1}, 0});
      if (m <= m_max - 1 && m <= n_folds - 2) {
        for (int j = 0; j < Ki; ++j) plan.entries.push_back({{s, GridKind::kStag, m, -1, j}, 0});
      }
    }
  }
  std::sort(plan.entries.begin(), plan.entries.end(),
            [](const GridEntry& a, const GridEntry& b) { return a.key < b.key; });
  for (GridEntry& e : plan.entries) e.seed = entry_seed(master_seed, e.key);
  return plan;
}

std::string grid_run_hash(const GridPlan& plan, const Dataset& ds, const FoldAssignment& fa) {
  return Fnv1a()
      .update(plan.hash())
      .update(dataset_digest(ds))
      .update(folds_to_csv(ds, fa))
      .hex();
}

TrainingSelection entry_selection(const GridSpecKey& key, const Dataset& ds, const FoldAssignment& fa) {
  const FoldAssignment shifted = fa.with_shift(key.shift);
  std::vector<int> counts(ds.K(), key.m);
  if (key.kind == GridKind::kStl) {
    std::fill(counts.begin(), counts.end(), 0);
    counts.at(static_cast<std::size_t>(key.target_task)) = key.m;
    return training_subset(ds, shifted, counts);
  }
  if (key.kind == GridKind::kStag) {
    return training_subset(ds, shifted, counts, static_cast<std::size_t>(key.aux_task));
  }
  return training_subset(ds, shifted, counts);
}

GridObservation run_entry(const GridEntry& entry, const GridPlan& plan, const Dataset& ds,
                          const FoldAssignment& fa, const std::string& config_hash) {
  const GridSpecKey& key = entry.key;
  if (ds.K() != plan.K) throw ConfigError("grid plan K does not match the dataset");
  const TrainingSelection sel = entry_selection(key, ds, fa);

  ModelConfig cfg = key.kind == GridKind::kStl ? plan.stl : plan.mtl;
  cfg.d = ds.d();
  cfg.K = ds.K();
  cfg.seed = entry.seed;
  const TrainedModel model = train(ds, sel, cfg);

  const std::vector<std::size_t> rows = test_rows(fa.with_shift(key.shift));
  RowMatrix x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ds.d()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = ds.features.row(static_cast<Eigen::Index>(rows[i]));
  }
  const RowMatrix scores = predict(model, x);

  std::vector<std::size_t> tasks;
  if (key.kind == GridKind::kStl) {
    tasks.push_back(static_cast<std::size_t>(key.target_task));
  } else {
    for (std::size_t k = 0; k < ds.K(); ++k) tasks.push_back(k);
  }
  const std::vector<TaskMetric> metrics = task_metrics(scores, ds, tasks, rows);

  std::vector<double> ref(sel.counts.begin(), sel.counts.end());
  if (sel.extra_task >= 0) ref[static_cast<std::size_t>(sel.extra_task)] -= static_cast<double>(sel.extra_count);
  double ref_total = 0.0, total = 0.0;
  for (std::size_t k = 0; k < ref.size(); ++k) {
    ref_total += ref[k];
    total += static_cast<double>(sel.counts[k]);
  }

  GridObservation obs;
  obs.key = key;
  obs.seed = entry.seed;
  obs.config_hash = config_hash;
  for (std::size_t idx = 0; idx < tasks.size(); ++idx) {
    const std::size_t t = tasks[idx];
    GridRecord r;
    r.task = t;
    r.n_t = static_cast<double>(sel.counts[t]);
    if (key.kind == GridKind::kMtl) {
      r.n_sigma = total - r.n_t;
    } else if (key.kind == GridKind::kStag) {
      if (static_cast<int>(t) == key.aux_task) {
        r.n_sigma = total - r.n_t;
      } else {
        const auto aux = static_cast<std::size_t>(key.aux_task);
        r.n_aux = static_cast<double>(sel.extra_count);
        r.n_sigma = ref_total - ref[t] - ref[aux];
      }
    }
    const TaskMetric& m = metrics[idx];
    r.auroc = m.auroc;
    r.aupr = m.aupr;
    r.n_test_pos = static_cast<double>(m.n_pos);
    r.n_test_neg = static_cast<double>(m.n_neg);
    r.defined = m.defined();
    r.n_defined = r.defined ? 1 : 0;
    obs.records.push_back(r);
  }
  return obs;
}

GridResult execute_grid(const GridPlan& plan, const Dataset& ds, const FoldAssignment& fa,
                        const GridRunOptions& opts) {
  if (ds.K() != plan.K) throw ConfigError("grid plan K does not match the dataset");
  if (fa.n_folds != plan.n_folds) throw ConfigError("grid plan n_folds does not match the fold file");

  GridResult result;
  result.config_hash = grid_run_hash(plan, ds, fa);

  std::map<GridSpecKey, GridObservation> done;
  std::set<GridSpecKey> planned;
  for (const GridEntry& e : plan.entries) planned.insert(e.key);
  if (opts.journal && std::filesystem::exists(*opts.journal)) {
    const std::string text = complete_lines(read_file(*opts.journal));
    if (!text.empty()) {
      for (GridObservation& obs : parse_grid_csv(text)) {
        if (obs.config_hash != result.config_hash || !planned.count(obs.key)) continue;
        if (obs.records.size() != expected_records(obs.key, plan.K)) continue;
        done.insert_or_assign(obs.key, std::move(obs));
      }
    }
  }
  result.reused = done.size();

  std::vector<const GridEntry*> pending;
  for (const GridEntry& e : plan.entries) {
    if (!done.count(e.key)) pending.push_back(&e);
  }

  std::ofstream journal;
  if (opts.journal) {
    if (opts.journal->has_parent_path()) std::filesystem::create_directories(opts.journal->parent_path());
    // Rewrite so the journal holds only valid rows for this run.
    std::ostringstream fresh;
    fresh << header_line();
    for (const auto& [key, obs] : done) append_rows(fresh, obs);
    write_file_atomic(*opts.journal, fresh.str());
    journal.open(*opts.journal, std::ios::app | std::ios::binary);
  }

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stopped{false};
  const std::size_t limit = opts.max_new_jobs;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= pending.size()) return;
      if (limit > 0 && i >= limit) {
        stopped = true;
        return;
      }
      const GridEntry& entry = *pending[i];
      try {
        GridObservation obs = run_entry(entry, plan, ds, fa, result.config_hash);
        std::lock_guard lock(mu);
        if (journal.is_open()) {
          std::ostringstream rows;
          append_rows(rows, obs);
          journal << rows.str();
          journal.flush();
        }
        done.insert_or_assign(entry.key, std::move(obs));
        ++result.executed;
      } catch (const std::exception& e) {
        spdlog::warn("grid entry {} failed: {}", entry.key.label(), e.what());
        std::lock_guard lock(mu);
        result.failures.push_back({entry.key, e.what()});
      }
    }
  };

  const int n_workers = std::max(1, std::min<int>(opts.parallelism, static_cast<int>(pending.size())));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::sort(result.failures.begin(), result.failures.end(),
            [](const GridFailure& a, const GridFailure& b) { return a.key < b.key; });
  for (auto& [key, obs] : done) result.observations.push_back(std::move(obs));
  result.complete = !stopped;
  return result;
}

std::string grid_to_csv(const std::vector<GridObservation>& observations) {
  std::ostringstream out;
  out << header_line();
  for (const GridObservation& obs : observations) append_rows(out, obs);
  return out.str();
}

std::vector<GridObservation> parse_grid_csv(std::string_view text) {
  const CsvTable table = parse_csv(text);
  std::array<std::size_t, kGridColumns.size()> col{};
  for (std::size_t i = 0; i < kGridColumns.size(); ++i) col[i] = table.require_column(kGridColumns[i]);
  std::vector<GridObservation> out;
  for (const auto& row : table.rows) {
    auto f = [&](std::size_t i) -> const std::string& { return row[col[i]]; };
    GridSpecKey key{static_cast<int>(parse_int(f(0))), parse_kind(f(1)), static_cast<int>(parse_int(f(2))),
                    static_cast<int>(parse_int(f(3))), static_cast<int>(parse_int(f(4)))};
    const std::uint64_t seed = std::stoull(f(14));
    if (out.empty() || out.back().key != key || out.back().seed != seed ||
        out.back().config_hash != f(15)) {
      out.push_back({key, seed, f(15), {}});
    }
    GridRecord r;
    r.task = static_cast<std::size_t>(parse_int(f(5)));
    r.n_t = parse_double(f(6));
    r.n_sigma = parse_double(f(7));
    r.n_aux = parse_double(f(8));
    r.auroc = optional_field(f(9));
    r.aupr = optional_field(f(10));
    r.n_test_pos = parse_double(f(11));
    r.n_test_neg = parse_double(f(12));
    if (f(13) != "0" && f(13) != "1") throw ParseError("defined must be 0 or 1, got '" + f(13) + "'");
    r.defined = f(13) == "1";
    r.n_defined = r.defined ? 1 : 0;
    out.back().records.push_back(r);
  }
  return out;
}

std::string grid_failures_to_csv(const std::vector<GridFailure>& failures) {
  CsvTable table;
  table.header = {"shift", "kind", "m", "target_task", "aux_task", "reason"};
  for (const GridFailure& f : failures) {
    table.rows.push_back({std::to_string(f.key.shift), std::string(kind_name(f.key.kind)),
                          std::to_string(f.key.m), std::to_string(f.key.target_task),
                          std::to_string(f.key.aux_task), f.reason});
  }
  return to_csv(table);
}

std::vector<GridObservation> average_over_shifts(const std::vector<GridObservation>& observations) {
  std::map<int, std::set<GridSpecKey>> keys_by_shift;
  std::map<GridSpecKey, std::vector<const GridObservation*>> groups;
  for (const GridObservation& obs : observations) {
    GridSpecKey k = obs.key;
    k.shift = -1;
    if (!keys_by_shift[obs.key.shift].insert(k).second) {
      throw SpecMismatch("duplicate observation " + obs.key.label());
    }
    groups[k].push_back(&obs);
  }
  if (keys_by_shift.empty()) return {};
  const std::set<GridSpecKey>& first = keys_by_shift.begin()->second;
  for (const auto& [shift, keys] : keys_by_shift) {
    if (keys != first) {
      throw SpecMismatch("shift " + std::to_string(shift) + " covers a different spec set than shift " +
                         std::to_string(keys_by_shift.begin()->first));
    }
  }

  std::vector<GridObservation> out;
  for (auto& [key, group] : groups) {
    std::sort(group.begin(), group.end(),
              [](const GridObservation* a, const GridObservation* b) { return a->key.shift < b->key.shift; });
    const std::size_t S = group.size();
    GridObservation avg;
    avg.key = key;
    avg.config_hash = group.front()->config_hash;
    for (std::size_t r = 0; r < group.front()->records.size(); ++r) {
      GridRecord acc;
      acc.task = group.front()->records[r].task;
      double sum_auroc = 0.0, sum_aupr = 0.0;
      int n_auroc = 0, n_aupr = 0;
      for (const GridObservation* obs : group) {
        if (obs->records.size() != group.front()->records.size() || obs->records[r].task != acc.task) {
          throw SpecMismatch("task records differ across shifts for " + key.label());
        }
        const GridRecord& rec = obs->records[r];
        acc.n_t += rec.n_t;
        acc.n_sigma += rec.n_sigma;
        acc.n_aux += rec.n_aux;
        acc.n_test_pos += rec.n_test_pos;
        acc.n_test_neg += rec.n_test_neg;
        if (rec.auroc) sum_auroc += *rec.auroc, ++n_auroc;
        if (rec.aupr) sum_aupr += *rec.aupr, ++n_aupr;
        acc.n_defined += rec.defined ? 1 : 0;
      }
      const double s = static_cast<double>(S);
      acc.n_t /= s;
      acc.n_sigma /= s;
      acc.n_aux /= s;
      acc.n_test_pos /= s;
      acc.n_test_neg /= s;
      acc.defined = 2 * static_cast<std::size_t>(acc.n_defined) >= S;
      if (acc.defined) {
        acc.auroc = sum_auroc / n_auroc;
        acc.aupr = sum_aupr / n_aupr;
      }
      avg.records.push_back(acc);
    }
    out.push_back(std::move(avg));
  }
  return out;
}

std::string averaged_to_csv(const std::vector<GridObservation>& averaged) {
  CsvTable table;
  table.header.assign(kGridColumns.begin(), kGridColumns.end() - 2);
  table.header.push_back("n_defined");
  table.header.push_back("config_hash");
  for (const GridObservation& obs : averaged) {
    for (const GridRecord& r : obs.records) {
      table.rows.push_back({"E", std::string(kind_name(obs.key.kind)), std::to_string(obs.key.m),
                            std::to_string(obs.key.target_task), std::to_string(obs.key.aux_task),
                            std::to_string(r.task), format_double(r.n_t), format_double(r.n_sigma),
                            format_double(r.n_aux), format_optional(r.auroc), format_optional(r.aupr),
                            format_double(r.n_test_pos), format_double(r.n_test_neg), r.defined ? "1" : "0",
                            std::to_string(r.n_defined), obs.config_hash});
    }
  }
  return to_csv(table);
}

std::vector<FitPoint> fit_points(const std::vector<GridObservation>& observations, GridKind kind,
                                 std::size_t task, Metric metric, int aux_task) {
  auto point = [&](const GridRecord& r, int m) {
    FitPoint pt;
    pt.args.n_t = r.n_t;
    if (kind != GridKind::kStl) pt.args.n_sigma = r.n_sigma;
    if (kind == GridKind::kStag) pt.args.n_aux = r.n_aux;
    pt.value = metric == Metric::kAuroc ? *r.auroc : *r.aupr;
    pt.fold_count = m;
    return pt;
  };
  std::vector<FitPoint> out;
  std::set<int> stag_folds;
  for (const GridObservation& obs : observations) {
    if (obs.key.kind != kind) continue;
    if (kind == GridKind::kStl && obs.key.target_task != static_cast<int>(task)) continue;
    if (kind == GridKind::kStag && (obs.key.aux_task != aux_task || aux_task == static_cast<int>(task))) {
      continue;
    }
    const GridRecord* aux = nullptr;
    for (const GridRecord& r : obs.records) {
      if (static_cast<int>(r.task) == aux_task) aux = &r;
    }
    for (const GridRecord& r : obs.records) {
      if (r.task != task || !r.defined) continue;
      FitPoint pt = point(r, obs.key.m);
      // The auxiliary's own record carries its reference plus extra labels.
      if (kind == GridKind::kStag && aux) pt.args.n_aux = aux->n_t;
      out.push_back(pt);
      stag_folds.insert(obs.key.m);
    }
  }
  if (kind != GridKind::kStag) return out;

  // MTL references at the same fold counts, with the auxiliary task's labels
  // moved out of n_sigma.
  for (const GridObservation& obs : observations) {
    if (obs.key.kind != GridKind::kMtl || !stag_folds.count(obs.key.m)) continue;
    const GridRecord* target = nullptr;
    const GridRecord* aux = nullptr;
    for (const GridRecord& r : obs.records) {
      if (r.task == task) target = &r;
      if (static_cast<int>(r.task) == aux_task) aux = &r;
    }
    if (!target || !aux || !target->defined) continue;
    FitPoint pt = point(*target, obs.key.m);
    pt.args.n_aux = aux->n_t;
    pt.args.n_sigma = std::max(0.0, target->n_sigma - aux->n_t);
    out.push_back(pt);
  }
  return out;
}

}  // namespace mtlc
