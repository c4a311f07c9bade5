// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "mtlc/csv.hpp"
#include "mtlc/error.hpp"
#include "mtlc/grid.hpp"
#include "oracles.hpp"

namespace mtlc {
namespace {

using testing::Rng;

ModelConfig tiny_model() {
  ModelConfig c;
  c.r = 4;
  c.epochs = 2;
  c.batch_size = 32;
  c.learning_rate = 3e-3;
  return c;
}

struct Fixture {
  Dataset ds;
  FoldAssignment fa;
  GridPlan plan;
};

Fixture make_fixture(std::uint64_t seed = 1, std::vector<int> shifts = {0, 1}, int m_max = 2) {
  Rng rng(seed);
  Fixture f;
  f.ds = testing::random_dataset(rng, 160, 4, 3, 0.7);
  f.fa = assign_folds(f.ds, 4, FoldGrouping::kRow, seed);
  f.plan = plan_grid(3, 4, m_max, std::move(shifts), seed, tiny_model(), tiny_model());
  return f;
}

// Present labels of a task in rows whose fold sits at the given positions.
double count_labels(const Dataset& ds, const FoldAssignment& fa, std::size_t task, int shift, int from, int to) {
  const FoldAssignment s = fa.with_shift(shift);
  std::set<int> folds;
  for (int p = from; p < to; ++p) folds.insert(s.fold_at(p));
  double n = 0;
  for (std::size_t i = 0; i < ds.n_rows(); ++i) {
    if (folds.count(fa.fold_of_row[i]) && ds.is_present(i, task)) ++n;
  }
  return n;
}

std::map<std::size_t, std::size_t> kind_counts(const GridPlan& plan) {
  std::map<std::size_t, std::size_t> out;
  for (const GridEntry& e : plan.entries) ++out[static_cast<std::size_t>(e.key.kind)];
  return out;
}

const GridObservation& find(const std::vector<GridObservation>& obs, const GridSpecKey& key) {
  const auto it = std::find_if(obs.begin(), obs.end(), [&](const GridObservation& o) { return o.key == key; });
  if (it == obs.end()) throw std::runtime_error("missing " + key.label());
  return *it;
}

GridRecord record(std::size_t task, std::optional<double> auroc, double n_t) {
  GridRecord r;
  r.task = task;
  r.n_t = n_t;
  r.auroc = auroc;
  r.aupr = auroc;
  r.defined = auroc.has_value();
  r.n_defined = r.defined ? 1 : 0;
  return r;
}

TEST(GridPlan, SmallGridHasElevenEntriesPerShift) {
  const GridPlan plan = plan_grid(3, 4, 2, {0}, 9);
  EXPECT_EQ(plan.entries.size(), 11U);
  auto counts = kind_counts(plan);
  EXPECT_EQ(counts[0], 6U);
  EXPECT_EQ(counts[1], 2U);
  EXPECT_EQ(counts[2], 3U);
  EXPECT_EQ(plan_grid(3, 4, 2, {0, 2}, 9).entries.size(), 22U);
}

TEST(GridPlan, SingleFoldBudgetHasNoAugmentedEntries) {
  const GridPlan plan = plan_grid(5, 4, 1, {0, 1, 2}, 9);
  EXPECT_EQ(kind_counts(plan)[2], 0U);
  EXPECT_EQ(plan.entries.size(), 3U * (5 + 1));
}

TEST(GridPlan, SeedChangesSeedsNotSpecs) {
  const GridPlan a = plan_grid(4, 5, 3, {0, 1}, 1);
  const GridPlan b = plan_grid(4, 5, 3, {0, 1}, 2);
  ASSERT_EQ(a.entries.size(), b.entries.size());
  std::size_t same_seed = 0;
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    EXPECT_EQ(a.entries[i].key, b.entries[i].key);
    same_seed += a.entries[i].seed == b.entries[i].seed ? 1 : 0;
  }
  EXPECT_EQ(same_seed, 0U);
  EXPECT_NE(a.hash(), b.hash());
}

TEST(GridPlan, FullSizePlanEnumerates) {
  std::vector<int> shifts(10);
  for (int s = 0; s < 10; ++s) shifts[static_cast<std::size_t>(s)] = s;
  const GridPlan plan = plan_grid(244, 10, 9, shifts, 3);
  const std::size_t per_shift = 244 * 9 + 9 + 8 * 244;
  EXPECT_EQ(plan.entries.size(), 10 * per_shift);
  std::set<GridSpecKey> keys;
  for (const GridEntry& e : plan.entries) keys.insert(e.key);
  EXPECT_EQ(keys.size(), plan.entries.size());
  EXPECT_TRUE(std::is_sorted(plan.entries.begin(), plan.entries.end(),
                             [](const GridEntry& x, const GridEntry& y) { return x.key < y.key; }));
}

TEST(GridPlan, AugmentedEntriesShareReferenceSeed) {
  const GridPlan plan = plan_grid(3, 5, 3, {0, 4}, 11);
  std::map<std::pair<int, int>, std::uint64_t> mtl;
  for (const GridEntry& e : plan.entries) {
    if (e.key.kind == GridKind::kMtl) mtl[{e.key.shift, e.key.m}] = e.seed;
  }
  std::size_t checked = 0;
  for (const GridEntry& e : plan.entries) {
    if (e.key.kind != GridKind::kStag) continue;
    EXPECT_EQ(e.seed, mtl.at({e.key.shift, e.key.m}));
    ++checked;
  }
  EXPECT_EQ(checked, 2U * 2 * 3);
}

TEST(GridPlan, RejectsBadParameters) {
  EXPECT_THROW(plan_grid(3, 4, 4, {0}, 1), ConfigError);
  EXPECT_THROW(plan_grid(3, 4, 0, {0}, 1), ConfigError);
  EXPECT_THROW(plan_grid(3, 1, 1, {0}, 1), ConfigError);
  EXPECT_THROW(plan_grid(3, 4, 2, {0, 0}, 1), ConfigError);
  EXPECT_THROW(plan_grid(3, 4, 2, {4}, 1), ConfigError);
  EXPECT_THROW(plan_grid(3, 4, 2, {}, 1), ConfigError);
  EXPECT_THROW(plan_grid(0, 4, 2, {0}, 1), ConfigError);
}

TEST(GridRun, CountsMatchManualTally) {
  const Fixture f = make_fixture(2);
  const GridResult res = execute_grid(f.plan, f.ds, f.fa);
  ASSERT_TRUE(res.complete);
  ASSERT_TRUE(res.failures.empty());
  for (const GridObservation& obs : res.observations) {
    const int s = obs.key.shift, m = obs.key.m;
    for (const GridRecord& r : obs.records) {
      const double base = count_labels(f.ds, f.fa, r.task, s, 0, m);
      double others = 0;
      for (std::size_t k = 0; k < 3; ++k) {
        if (k != r.task) others += count_labels(f.ds, f.fa, k, s, 0, m);
      }
      switch (obs.key.kind) {
        case GridKind::kStl:
          EXPECT_EQ(r.n_t, base);
          EXPECT_EQ(r.n_sigma, 0.0);
          EXPECT_EQ(r.n_aux, 0.0);
          break;
        case GridKind::kMtl:
          EXPECT_EQ(r.n_t, base);
          EXPECT_EQ(r.n_sigma, others);
          EXPECT_EQ(r.n_aux, 0.0);
          break;
        case GridKind::kStag: {
          const auto aux = static_cast<std::size_t>(obs.key.aux_task);
          const double extra = count_labels(f.ds, f.fa, aux, s, m, m + 1);
          if (r.task == aux) {
            EXPECT_EQ(r.n_t, base + extra);
            EXPECT_EQ(r.n_sigma, others);
            EXPECT_EQ(r.n_aux, 0.0);
          } else {
            const double aux_base = count_labels(f.ds, f.fa, aux, s, 0, m);
            EXPECT_EQ(r.n_t, base);
            EXPECT_EQ(r.n_sigma, others - aux_base);
            EXPECT_EQ(r.n_aux, extra);
          }
          break;
        }
      }
      double pos = 0, neg = 0;
      const int test = f.fa.with_shift(s).test_fold();
      for (std::size_t i = 0; i < f.ds.n_rows(); ++i) {
        if (f.fa.fold_of_row[i] != test || !f.ds.is_present(i, r.task)) continue;
        (f.ds.label(i, r.task) ? pos : neg) += 1;
      }
      EXPECT_EQ(r.n_test_pos, pos);
      EXPECT_EQ(r.n_test_neg, neg);
    }
  }
}

TEST(GridRun, RecordsPerKind) {
  const Fixture f = make_fixture(3, {0});
  const GridResult res = execute_grid(f.plan, f.ds, f.fa);
  ASSERT_EQ(res.observations.size(), f.plan.entries.size());
  for (const GridObservation& obs : res.observations) {
    if (obs.key.kind == GridKind::kStl) {
      ASSERT_EQ(obs.records.size(), 1U);
      EXPECT_EQ(obs.records[0].task, static_cast<std::size_t>(obs.key.target_task));
    } else {
      ASSERT_EQ(obs.records.size(), 3U);
      for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(obs.records[k].task, k);
    }
  }
}

TEST(GridRun, CountsConserveTotal) {
  const Fixture f = make_fixture(4);
  const GridResult res = execute_grid(f.plan, f.ds, f.fa);
  for (const GridObservation& obs : res.observations) {
    if (obs.key.kind == GridKind::kStl) continue;
    const TrainingSelection sel = entry_selection(obs.key, f.ds, f.fa);
    const double total = static_cast<double>(sel.total());
    for (const GridRecord& r : obs.records) {
      // STAG: the auxiliary's labels appear only in its own record.
      const bool split = obs.key.kind == GridKind::kStag && static_cast<int>(r.task) != obs.key.aux_task;
      const double rest = split ? obs.records[static_cast<std::size_t>(obs.key.aux_task)].n_t : r.n_aux;
      EXPECT_EQ(r.n_t + r.n_sigma + rest, total) << obs.key.label();
    }
  }
}

TEST(GridRun, CountsGrowWithBudget) {
  const Fixture f = make_fixture(5, {0, 1, 2}, 3);
  const GridResult res = execute_grid(f.plan, f.ds, f.fa);
  for (int s : {0, 1, 2}) {
    for (std::size_t t = 0; t < 3; ++t) {
      for (int m = 2; m <= 3; ++m) {
        const auto& lo = find(res.observations, {s, GridKind::kMtl, m - 1, -1, -1});
        const auto& hi = find(res.observations, {s, GridKind::kMtl, m, -1, -1});
        EXPECT_LE(lo.records[t].n_t, hi.records[t].n_t);
        EXPECT_LE(lo.records[t].n_sigma, hi.records[t].n_sigma);
        const auto& a = find(res.observations, {s, GridKind::kStl, m - 1, static_cast<int>(t), -1});
        const auto& b = find(res.observations, {s, GridKind::kStl, m, static_cast<int>(t), -1});
        EXPECT_LE(a.records[0].n_t, b.records[0].n_t);
      }
    }
  }
}

TEST(GridRun, ReferenceCountsAgree) {
  const Fixture f = make_fixture(6, {0, 3}, 3);
  const GridResult res = execute_grid(f.plan, f.ds, f.fa);
  for (const GridObservation& obs : res.observations) {
    const auto& mtl = find(res.observations, {obs.key.shift, GridKind::kMtl, obs.key.m, -1, -1});
    if (obs.key.kind == GridKind::kStl) {
      EXPECT_EQ(obs.records[0].n_t, mtl.records[obs.records[0].task].n_t);
    } else if (obs.key.kind == GridKind::kStag) {
      for (const GridRecord& r : obs.records) {
        if (static_cast<int>(r.task) == obs.key.aux_task) continue;
        EXPECT_EQ(r.n_t, mtl.records[r.task].n_t);
        EXPECT_EQ(r.n_sigma + mtl.records[static_cast<std::size_t>(obs.key.aux_task)].n_t,
                  mtl.records[r.task].n_sigma);
      }
    }
  }
}

TEST(GridRun, RerunIsByteIdentical) {
  const Fixture f = make_fixture(7);
  const GridResult a = execute_grid(f.plan, f.ds, f.fa);
  const GridResult b = execute_grid(f.plan, f.ds, f.fa);
  EXPECT_EQ(grid_to_csv(a.observations), grid_to_csv(b.observations));
}

TEST(GridRun, ParallelismDoesNotChangeOutput) {
  const Fixture f = make_fixture(8);
  GridRunOptions serial, pooled;
  serial.parallelism = 1;
  pooled.parallelism = 4;
  const GridResult a = execute_grid(f.plan, f.ds, f.fa, serial);
  const GridResult b = execute_grid(f.plan, f.ds, f.fa, pooled);
  EXPECT_EQ(grid_to_csv(a.observations), grid_to_csv(b.observations));
}

TEST(GridRun, ResumeCompletesInterruptedRun) {
  const Fixture f = make_fixture(9);
  const auto journal = std::filesystem::temp_directory_path() / "mtlc_test_grid.journal.csv";
  std::filesystem::remove(journal);
  const GridResult fresh = execute_grid(f.plan, f.ds, f.fa);

  const GridResult part = execute_grid(f.plan, f.ds, f.fa, {.journal = journal, .max_new_jobs = 5});
  EXPECT_FALSE(part.complete);
  EXPECT_EQ(part.executed, 5U);
  {
    std::ofstream torn(journal, std::ios::app);
    torn << "0,STL,1";
  }
  const GridResult rest = execute_grid(f.plan, f.ds, f.fa, {.journal = journal});
  EXPECT_TRUE(rest.complete);
  EXPECT_EQ(rest.reused, 5U);
  EXPECT_EQ(rest.executed, f.plan.entries.size() - 5);
  EXPECT_EQ(grid_to_csv(rest.observations), grid_to_csv(fresh.observations));
  std::filesystem::remove(journal);
}

TEST(GridRun, JournalFromAnotherRunIsIgnored) {
  const Fixture f = make_fixture(10);
  const auto journal = std::filesystem::temp_directory_path() / "mtlc_test_grid_other.journal.csv";
  std::filesystem::remove(journal);
  GridPlan other = plan_grid(3, 4, 2, {0, 1}, 99, tiny_model(), tiny_model());
  execute_grid(other, f.ds, f.fa, {.journal = journal, .max_new_jobs = 3});
  const GridResult res = execute_grid(f.plan, f.ds, f.fa, {.journal = journal});
  EXPECT_EQ(res.reused, 0U);
  EXPECT_EQ(res.executed, f.plan.entries.size());
  std::filesystem::remove(journal);
}

TEST(GridRun, EntryFailuresDoNotStopTheSweep) {
  Fixture f = make_fixture(11, {0});
  const int test = f.fa.test_fold();
  for (std::size_t i = 0; i < f.ds.n_rows(); ++i) {
    if (f.fa.fold_of_row[i] != test) f.ds.present[i * 3 + 2] = 0;
  }
  const GridResult res = execute_grid(f.plan, f.ds, f.fa);
  ASSERT_EQ(res.failures.size(), 2U);
  for (const GridFailure& fail : res.failures) {
    EXPECT_EQ(fail.key.kind, GridKind::kStl);
    EXPECT_EQ(fail.key.target_task, 2);
  }
  EXPECT_EQ(res.observations.size(), f.plan.entries.size() - 2);
}

TEST(GridRun, CsvRoundTrips) {
  const Fixture f = make_fixture(12);
  const GridResult res = execute_grid(f.plan, f.ds, f.fa);
  std::vector<GridObservation> obs = res.observations;
  obs[0].records[0].auroc.reset();
  obs[0].records[0].aupr.reset();
  obs[0].records[0].defined = false;
  const std::string text = grid_to_csv(obs);
  const auto back = parse_grid_csv(text);
  ASSERT_EQ(back.size(), obs.size());
  EXPECT_FALSE(back[0].records[0].auroc.has_value());
  EXPECT_EQ(grid_to_csv(back), text);
  const CsvTable table = parse_csv(text);
  ASSERT_EQ(table.header.size(), kGridColumns.size());
  for (std::size_t i = 0; i < kGridColumns.size(); ++i) EXPECT_EQ(table.header[i], kGridColumns[i]);
}

TEST(GridRun, FitPointsFollowKind) {
  const Fixture f = make_fixture(13, {0}, 3);
  const GridResult res = execute_grid(f.plan, f.ds, f.fa);
  const auto stl = fit_points(res.observations, GridKind::kStl, 1, Metric::kAuroc);
  ASSERT_EQ(stl.size(), 3U);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(stl[i].fold_count, static_cast<int>(i) + 1);
    EXPECT_EQ(stl[i].args.n_sigma, 0.0);
  }
  EXPECT_TRUE(fit_points(res.observations, GridKind::kStag, 1, Metric::kAupr, 1).empty());
  const auto stag = fit_points(res.observations, GridKind::kStag, 1, Metric::kAupr, 0);
  // Two augmented points, then the MTL references at m = 1, 2.
  ASSERT_EQ(stag.size(), 4U);
  for (int m = 1; m <= 2; ++m) {
    const auto& aug = stag[static_cast<std::size_t>(m - 1)];
    const auto& ref = stag[static_cast<std::size_t>(m + 1)];
    const auto& mtl = find(res.observations, {0, GridKind::kMtl, m, -1, -1});
    const auto& obs = find(res.observations, {0, GridKind::kStag, m, -1, 0});
    EXPECT_EQ(aug.args.n_aux, obs.records[0].n_t);
    EXPECT_EQ(aug.fold_count, m);
    EXPECT_EQ(ref.fold_count, m);
    EXPECT_GT(aug.args.n_aux, ref.args.n_aux);
    EXPECT_EQ(ref.args.n_aux, mtl.records[0].n_t);
    EXPECT_EQ(ref.args.n_sigma, mtl.records[1].n_sigma - mtl.records[0].n_t);
    EXPECT_EQ(ref.args.n_t, aug.args.n_t);
    EXPECT_EQ(ref.args.n_sigma, aug.args.n_sigma);
  }
}

TEST(GridAverage, SingleShiftIsIdentity) {
  const Fixture f = make_fixture(14, {2});
  const GridResult res = execute_grid(f.plan, f.ds, f.fa);
  const auto avg = average_over_shifts(res.observations);
  ASSERT_EQ(avg.size(), res.observations.size());
  for (std::size_t i = 0; i < avg.size(); ++i) {
    EXPECT_EQ(avg[i].key.shift, -1);
    for (std::size_t r = 0; r < avg[i].records.size(); ++r) {
      const GridRecord& a = avg[i].records[r];
      const GridRecord& o = res.observations[i].records[r];
      EXPECT_EQ(a.n_t, o.n_t);
      EXPECT_EQ(a.n_sigma, o.n_sigma);
      EXPECT_EQ(a.n_aux, o.n_aux);
      EXPECT_EQ(a.auroc, o.auroc);
      EXPECT_EQ(a.aupr, o.aupr);
      EXPECT_EQ(a.defined, o.defined);
    }
  }
}

TEST(GridAverage, MatchesManualMeans) {
  const Fixture f = make_fixture(15, {0, 1});
  const GridResult res = execute_grid(f.plan, f.ds, f.fa);
  const auto avg = average_over_shifts(res.observations);
  for (const GridObservation& a : avg) {
    GridSpecKey k0 = a.key, k1 = a.key;
    k0.shift = 0;
    k1.shift = 1;
    const auto& o0 = find(res.observations, k0);
    const auto& o1 = find(res.observations, k1);
    for (std::size_t r = 0; r < a.records.size(); ++r) {
      const GridRecord &x = o0.records[r], &y = o1.records[r], &m = a.records[r];
      EXPECT_DOUBLE_EQ(m.n_t, (x.n_t + y.n_t) / 2);
      EXPECT_DOUBLE_EQ(m.n_sigma, (x.n_sigma + y.n_sigma) / 2);
      EXPECT_DOUBLE_EQ(m.n_aux, (x.n_aux + y.n_aux) / 2);
      EXPECT_DOUBLE_EQ(m.n_test_pos, (x.n_test_pos + y.n_test_pos) / 2);
      if (x.defined && y.defined) {
        EXPECT_DOUBLE_EQ(*m.auroc, (*x.auroc + *y.auroc) / 2);
        EXPECT_DOUBLE_EQ(*m.aupr, (*x.aupr + *y.aupr) / 2);
        EXPECT_EQ(m.n_defined, 2);
      }
    }
  }
  const std::string csv = averaged_to_csv(avg);
  EXPECT_EQ(csv.substr(0, csv.find('\n')).find("n_defined") != std::string::npos, true);
}

TEST(GridAverage, MajorityRule) {
  auto obs = [](int shift, std::optional<double> v) {
    return GridObservation{{shift, GridKind::kMtl, 1, -1, -1}, 1, "h", {record(0, v, 10)}};
  };
  const auto two = average_over_shifts({obs(0, 0.8), obs(1, std::nullopt)});
  ASSERT_EQ(two.size(), 1U);
  EXPECT_TRUE(two[0].records[0].defined);
  EXPECT_DOUBLE_EQ(*two[0].records[0].auroc, 0.8);
  EXPECT_EQ(two[0].records[0].n_defined, 1);

  const auto three = average_over_shifts({obs(0, 0.8), obs(1, std::nullopt), obs(2, std::nullopt)});
  EXPECT_FALSE(three[0].records[0].defined);
  EXPECT_FALSE(three[0].records[0].auroc.has_value());

  const auto mostly = average_over_shifts({obs(0, 0.6), obs(1, 0.9), obs(2, std::nullopt)});
  EXPECT_TRUE(mostly[0].records[0].defined);
  EXPECT_DOUBLE_EQ(*mostly[0].records[0].auroc, 0.75);
}

TEST(GridAverage, DifferentSpecSetsAreRejected) {
  std::vector<GridObservation> obs = {
      {{0, GridKind::kMtl, 1, -1, -1}, 1, "h", {record(0, 0.7, 5)}},
      {{0, GridKind::kMtl, 2, -1, -1}, 1, "h", {record(0, 0.7, 9)}},
      {{1, GridKind::kMtl, 1, -1, -1}, 1, "h", {record(0, 0.7, 5)}},
  };
  EXPECT_THROW(average_over_shifts(obs), SpecMismatch);
  obs.pop_back();
  obs.push_back(obs[0]);
  EXPECT_THROW(average_over_shifts(obs), SpecMismatch);
}

}  // namespace
}  // namespace mtlc
