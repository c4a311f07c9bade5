// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtlc/fitter.hpp"
#include "mtlc/grid.hpp"
#include "mtlc/metrics.hpp"
#include "mtlc/tag.hpp"

namespace mtlc {

struct FitFailure {
  int task = -1;
  int stage = 0;
  int aux = -1;
  std::string reason;
};

struct GridFits {
  std::vector<StagedFit> fits;  ///< by target task
  std::vector<FitFailure> failures;
};

/// Staged fits of every task on shift-averaged observations of one metric.
/// Tasks whose stage 1 or 2 fails are reported as failures and omitted.
GridFits fit_grid(const std::vector<GridObservation>& averaged, std::size_t K, Metric metric,
                  const FitOptions& opts = {}, int parallelism = 1);

/// task_id, stage, aux_task_id (-1 for stages 1 and 2), the ParamSet columns,
/// sse, n_points, converged.
std::string fits_to_csv(const std::vector<StagedFit>& fits);
std::vector<StagedFit> parse_fits_csv(std::string_view text);
std::string fit_failures_to_csv(const std::vector<FitFailure>& failures);

/// A report rendered twice: CSV and Markdown. Extra CSVs (scatter data,
/// decomposition rows) are keyed by a file-name stem.
struct Report {
  std::string csv;
  std::string markdown;
  std::map<std::string, std::string> extra_csv;
};

/// Family selection on STL observations of every shift, both metrics.
Report family_selection_report(const std::vector<GridObservation>& observations, std::size_t K,
                               std::span<const CurveFamily> families, const FitOptions& opts = {});

struct CorrelationRow {
  std::string variant;   ///< report-specific grouping ("max-fold", "1-fold", "averaged")
  std::string metric;    ///< auroc | aupr
  std::string quantity;  ///< a | b | c | a_ij | b_ij-b_iSigma | c_ij-c_iSigma
  std::optional<CorrResult> corr;
  std::string status;    ///< "ok" or the error kind
};

std::string correlations_to_csv(const std::vector<CorrelationRow>& rows);

/// Spearman correlation of parameter deltas (multi-task EXP3_1 fit minus the
/// stage-1 fit) with metric deltas (MTL minus STL at the largest fold count)
/// for a, b and c. Throws InsufficientTasks with fewer than 3 usable tasks
/// for a metric. Emits per-task scatter rows as extra CSV "scatter".
Report stl_vs_mtl_report(const GridFits& auroc, const GridFits& aupr,
                         const std::vector<GridObservation>& averaged, std::size_t K,
                         const FitOptions& opts = {});

struct DecompositionRow {
  int target = -1;
  int aux = -1;
  double a_i = 0.0;
  double a_sigma = 0.0;
  double a_ij = 0.0;
  double b_isigma = 0.0;
  double b_ij = 0.0;
  double c_isigma = 0.0;
  double c_ij = 0.0;
  double delta_b() const { return b_ij - b_isigma; }
  double delta_c() const { return c_ij - c_isigma; }
};

std::vector<DecompositionRow> decomposition(const std::vector<StagedFit>& fits);
std::string decomposition_to_csv(const std::vector<DecompositionRow>& rows);

/// Mean affinity matrix over the given settings (per-pair mean over settings
/// where the pair is defined).
RowMatrix mean_affinity(const std::vector<TagSetting>& settings, std::size_t K,
                        std::optional<int> only_m = std::nullopt);

/// Spearman correlation between TAG z(j, i) and each of a_ij, b_ij - b_iSigma
/// and c_ij - c_iSigma, for both metrics, with TAG taken at m = 1 ("1-fold")
/// and averaged over every setting ("averaged"). Throws InsufficientPairs
/// when fewer than 3 pairs overlap.
Report tag_vs_mtlc_report(const std::vector<TagSetting>& tag, const GridFits& auroc,
                          const GridFits& aupr, std::size_t K);

struct ForecastRow {
  int task = -1;
  int candidate = 0;       ///< index into the task's budget list
  double budget = 0.0;
  double n_t = 0.0;
  double n_sigma = 0.0;
  double current = 0.0;    ///< curve value at the current counts
  double predicted = 0.0;  ///< curve value after adding the budget
  double gain = 0.0;
  double gain_per_label = 0.0;
  int rank = 0;            ///< 1 = best gain per label among rows of the same candidate
};

struct Forecast {
  std::vector<ForecastRow> rows;                 ///< sorted by (candidate, rank)
  std::vector<std::pair<int, std::string>> omitted;
};

/// Current counts of a task: its MTL record at the largest fold count.
std::optional<CurveArgs> current_args(const std::vector<GridObservation>& averaged, std::size_t task);

/// EXP3_2 marginal gain of each task for every candidate budget, ranked by
/// gain per added label among rows of the same candidate index. Tasks without a stage-2 fit or
/// current counts are omitted with a reason.
Forecast gain_forecast(const std::vector<StagedFit>& fits, const std::vector<GridObservation>& averaged,
                       std::size_t K, const std::map<int, std::vector<double>>& budgets);
Report forecast_report(const Forecast& forecast);

/// Extra labels one more fold would add to each task: mean labels per fold
/// at the largest MTL fold count.
std::map<int, std::vector<double>> one_fold_budgets(const std::vector<GridObservation>& averaged,
                                                    std::size_t K);

}  // namespace mtlc
