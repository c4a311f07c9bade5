// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mtlc/data.hpp"
#include "mtlc/fitter.hpp"
#include "mtlc/learner.hpp"

namespace mtlc {

/// STL: one task alone. MTL: every task on its first m folds. STAG: the MTL
/// reference plus one extra fold of one auxiliary task.
enum class GridKind { kStl = 0, kMtl = 1, kStag = 2 };

std::string_view kind_name(GridKind kind) noexcept;
GridKind parse_kind(std::string_view name);

/// Identity of one grid entry. target_task is set for STL only and aux_task
/// for STAG only (-1 otherwise). Ordering defines the output order.
struct GridSpecKey {
  int shift = 0;
  GridKind kind = GridKind::kMtl;
  int m = 1;
  int target_task = -1;
  int aux_task = -1;

  auto operator<=>(const GridSpecKey&) const = default;
  std::string label() const;
};

struct GridEntry {
  GridSpecKey key;
  std::uint64_t seed = 0;
};

struct GridPlan {
  std::size_t K = 0;
  int n_folds = 0;
  int m_max = 0;
  std::vector<int> shifts;
  std::uint64_t master_seed = 0;
  ModelConfig stl;  ///< used by STL entries
  ModelConfig mtl;  ///< used by MTL and STAG entries
  std::vector<GridEntry> entries;  ///< sorted by key

  /// Hash over plan parameters and both model configs.
  std::string hash() const;
};

/// Training seed of an entry. STAG entries share their MTL reference's seed.
std::uint64_t entry_seed(std::uint64_t master_seed, const GridSpecKey& key);

/// Per shift: STL for every (task, m in 1..m_max), MTL for m in 1..m_max,
/// STAG for every (m in 1..m_max-1, aux task). Throws ConfigError.
GridPlan plan_grid(std::size_t K, int n_folds, int m_max, std::vector<int> shifts,
                   std::uint64_t master_seed, const ModelConfig& stl = {},
                   const ModelConfig& mtl = {});

/// One per-task measurement. Counts are doubles so shift averages fit the
/// same record.
struct GridRecord {
  std::size_t task = 0;
  double n_t = 0.0;
  double n_sigma = 0.0;
  double n_aux = 0.0;
  std::optional<double> auroc;
  std::optional<double> aupr;
  double n_test_pos = 0.0;
  double n_test_neg = 0.0;
  bool defined = false;
  int n_defined = 0;  ///< shifts with a defined record (averages only)
};

struct GridObservation {
  GridSpecKey key;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<GridRecord> records;
};

struct GridFailure {
  GridSpecKey key;
  std::string reason;
};

struct GridRunOptions {
  int parallelism = 1;
  /// Completed observations are appended here as they finish; on start,
  /// observations already in it with the run's config hash are reused.
  std::optional<std::filesystem::path> journal;
  /// Stop after this many newly executed entries (0 = no limit).
  std::size_t max_new_jobs = 0;
};

struct GridResult {
  std::string config_hash;
  std::vector<GridObservation> observations;  ///< sorted by key
  std::vector<GridFailure> failures;
  std::size_t reused = 0;
  std::size_t executed = 0;
  bool complete = false;
};

/// Run hash: plan hash combined with the dataset and fold digests.
std::string grid_run_hash(const GridPlan& plan, const Dataset& ds, const FoldAssignment& fa);

/// Training selection of one entry; fa is the unshifted assignment.
TrainingSelection entry_selection(const GridSpecKey& key, const Dataset& ds, const FoldAssignment& fa);

/// Trains and evaluates one entry; fa is the unshifted assignment.
GridObservation run_entry(const GridEntry& entry, const GridPlan& plan, const Dataset& ds,
                          const FoldAssignment& fa, const std::string& config_hash);

/// Executes every entry with a bounded worker pool. Per-entry failures are
/// recorded and do not stop the sweep. Output order is the sorted key order.
GridResult execute_grid(const GridPlan& plan, const Dataset& ds, const FoldAssignment& fa,
                        const GridRunOptions& opts = {});

inline constexpr std::array<std::string_view, 16> kGridColumns = {
    "shift", "kind",       "m",          "target_task", "aux_task", "task",
    "n_t",   "n_sigma",    "n_aux",      "auroc",       "aupr",     "n_test_pos",
    "n_test_neg", "defined", "seed",     "config_hash"};

std::string grid_to_csv(const std::vector<GridObservation>& observations);
std::vector<GridObservation> parse_grid_csv(std::string_view text);
std::string grid_failures_to_csv(const std::vector<GridFailure>& failures);

/// Per (kind, m, target, aux) and task: mean of defined metric values and of
/// counts over shifts; defined when defined in at least half of the shifts.
/// Output keys carry shift -1. Throws SpecMismatch when shifts cover
/// different spec sets.
std::vector<GridObservation> average_over_shifts(const std::vector<GridObservation>& observations);
/// Averages with an extra n_defined column; shift is written as "E".
std::string averaged_to_csv(const std::vector<GridObservation>& averaged);

enum class Metric { kAuroc, kAupr };
std::string_view metric_name(Metric metric) noexcept;

/// Curve points of one task from observations of one kind. Only defined
/// records are used; fold_count = m. For STAG (one auxiliary task j) n_aux is
/// j's full label count rather than the extra fold alone, and the MTL records
/// at the same fold counts are appended as references with j's labels moved
/// from n_sigma into n_aux.
std::vector<FitPoint> fit_points(const std::vector<GridObservation>& observations, GridKind kind,
                                 std::size_t task, Metric metric, int aux_task = -1);

}  // namespace mtlc
