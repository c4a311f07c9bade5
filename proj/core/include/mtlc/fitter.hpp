// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mtlc/curves.hpp"

namespace mtlc {

/// One measured learning-curve point.
struct FitPoint {
  CurveArgs args;
  double value = 0.0;
  int fold_count = 1;
  double weight = 1.0;
};

struct FitResult {
  ParamSet params;
  double sse = 0.0;
  std::size_t n_points = 0;
  bool converged = false;
  int restarts_used = 0;
};

struct FitOptions {
  int restarts = 15;            ///< perturbed starts in addition to the given init
  double perturb_sigma = 0.5;   ///< log-normal perturbation factor
  int max_iter = 200;           ///< LM iterations per start
  double rel_sse_tol = 1e-10;
  double step_tol = 1e-12;
  std::uint64_t seed = 0;
  /// When set, receives the SSE after every accepted step, one vector per start.
  std::vector<std::vector<double>>* sse_trace = nullptr;
};

/// Box constraints applied by projection: c in [0,1], a_i >= 0, alpha in (0,4].
void project_to_bounds(ParamSet& params) noexcept;

/// Weighted sum of squared residuals; +inf if any residual is non-finite.
double weighted_sse(std::span<const FitPoint> points, CurveFamily family, const ParamSet& params);

/// Damped least squares (Levenberg-Marquardt) with projection onto the box
/// constraints, started from `init` and from `opts.restarts` perturbations of
/// it; the lowest SSE wins. Parameters marked in `freeze` are never touched.
///
/// ILOG2 silently drops points with scaled n_t <= 1 (a warning is logged).
/// Throws UnderDetermined when there are fewer points than free parameters or
/// a free rate coefficient has an identically-zero argument, and NonFinite
/// when the initial residuals are not finite.
FitResult fit_curve(std::span<const FitPoint> points, CurveFamily family, const ParamSet& init,
                    const FreezeMask& freeze, const FitOptions& opts = {});

/// Starting point derived from the data: c0 = max value + 0.01 (<= 1),
/// b0 = log(max(c0 - value_at_min_n, 1e-6)), a_i0 from the log-gap slope
/// between the smallest and largest n_t, n_scale = max n_t (1 for ILOG2,
/// which works on raw counts).
ParamSet init_heuristic(std::span<const FitPoint> points, CurveFamily family);

struct StagedFit {
  int target_task = -1;
  FitResult stage1;                        ///< EXP3_1 on single-task points
  FitResult stage2;                        ///< EXP3_2 on multi-task points, a_i frozen
  std::map<int, FitResult> stage3;         ///< EXP3_3 per auxiliary task, a_i and a_sigma frozen
  std::map<int, std::string> stage3_failures;
};

/// Three-stage protocol. stag[j] holds every EXP3_3 point for auxiliary j
/// (see fit_points, which adds the multi-task references with j's labels
/// counted in n_aux). Stage 3 for j fails with UnderDetermined unless some
/// fold count has points with different n_aux.
StagedFit fit_staged(std::span<const FitPoint> stl, std::span<const FitPoint> mtl,
                     const std::map<int, std::vector<FitPoint>>& stag, int target,
                     const FitOptions& opts = {});

/// Sequentially fits on points with fold_count <= k and scores squared
/// prediction error on fold_count k+1, starting from the p-th distinct fold
/// count (p = number of family parameters). Returns the sum.
double prequential_error(std::span<const FitPoint> points, CurveFamily family,
                         const FitOptions& opts = {});

struct FamilySelectionRow {
  CurveFamily family = CurveFamily::kExp3_1;
  double l2 = 0.0;      ///< mean SSE per permutation, averaged over permutations
  double e_l2 = 0.0;    ///< SSE on permutation-averaged points
  double preq = 0.0;
  double e_preq = 0.0;
  std::size_t excluded_l2 = 0;
  std::size_t excluded_e_l2 = 0;
  std::size_t excluded_preq = 0;
  std::size_t excluded_e_preq = 0;
  std::size_t n_tasks = 0;
};

/// points[shift][task]: single-grid-type points of every task under every
/// permutation shift.
using PointsByShift = std::vector<std::vector<std::vector<FitPoint>>>;

/// Per-fold-count means (arguments and values) across shifts for one task.
std::vector<FitPoint> average_points(const PointsByShift& points, std::size_t task);

std::vector<FamilySelectionRow> select_family(const PointsByShift& points,
                                              std::span<const CurveFamily> families,
                                              const FitOptions& opts = {});

}  // namespace mtlc
