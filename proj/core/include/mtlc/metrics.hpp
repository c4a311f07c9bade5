// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mtlc/data.hpp"

namespace mtlc {

/// Scores with binary labels; entries whose present flag is 0 are ignored.
/// An empty present span means every entry is present.
struct ScoredLabels {
  std::span<const double> scores;
  std::span<const std::uint8_t> labels;
  std::span<const std::uint8_t> present = {};
};

/// Mann-Whitney form: fraction of (positive, negative) pairs ranked correctly,
/// ties credited 1/2. Throws Undefined unless both classes are present.
double auroc(const ScoredLabels& data);

/// Average precision: mean over positives of precision at the positive's rank
/// in the order (-score, original index). Throws Undefined without positives.
double aupr(const ScoredLabels& data);

struct CorrResult {
  double r = 0.0;
  double p = 1.0;
  std::size_t n = 0;
};

/// Ranks with ties replaced by their average rank (1-based).
std::vector<double> average_ranks(std::span<const double> values);

/// Spearman rank correlation. Two-sided p: exact permutation distribution for
/// n <= 9, otherwise Student-t with n-2 degrees of freedom.
/// Throws DegenerateInput when either side has zero rank variance, and
/// DomainError for n < 3 or length mismatch.
CorrResult spearman(std::span<const double> x, std::span<const double> y);

inline constexpr std::size_t kExactSpearmanMaxN = 9;

struct TaskMetric {
  std::optional<double> auroc;
  std::optional<double> aupr;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  bool defined() const noexcept { return auroc.has_value() && aupr.has_value(); }
};

/// Metrics for each task in `tasks` (all tasks when empty) over `rows` of
/// `ds`. `predictions` is rows.size() x K in the same row order. Only rows
/// where the task's label is present count; single-class tasks stay undefined.
std::vector<TaskMetric> task_metrics(const RowMatrix& predictions, const Dataset& ds,
                                     std::span<const std::size_t> tasks,
                                     std::span<const std::size_t> rows);

}  // namespace mtlc
