// SPDX-License-Identifier: Apache-2.0
//
// Lookahead inter-task affinity: how a trunk step on one task's loss changes
// the loss of every other task on the same batch.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mtlc/data.hpp"
#include "mtlc/learner.hpp"

namespace mtlc {

/// z(j, i) = 1 - L_i(theta') / L_i(theta) where theta' is the trunk after a
/// step of size lookahead_lr along task j's trunk gradient. z_domain(i) uses
/// the summed gradient of every task except i. Undefined entries (and the
/// diagonal) are NaN.
struct AffinityRecord {
  std::size_t step = 0;
  RowMatrix z;
  Eigen::VectorXd z_domain;
};

/// Throws NoDefinedPairs when no (source, target) pair has a defined loss.
AffinityRecord affinity_step(const ModelParams& params, const Batch& batch, double lookahead_lr);

struct TagOptions {
  std::optional<double> lookahead_lr;  ///< defaults to the training learning rate
  std::size_t every = 10;              ///< record on every s-th step
  /// Stop after this many epochs. The records then cover the opening window
  /// of the full run, since training is a deterministic prefix.
  std::optional<int> epochs;
};

struct TagResult {
  RowMatrix mean;                      ///< K x K, NaN where no step was defined
  std::vector<std::size_t> n_records;  ///< K x K, row-major
  Eigen::VectorXd domain_mean;
  std::vector<std::size_t> domain_records;
  std::size_t n_steps = 0;             ///< steps recorded
};

/// Trains exactly like train() and records affinity_step on the current batch
/// every `every` steps; the final step is recorded when nothing else was.
TagResult run_tag(const Dataset& ds, const TrainingSelection& sel, const ModelConfig& cfg,
                  const TagOptions& opts = {});

struct TagSetting {
  int shift = 0;
  int m = 1;
  std::optional<TagResult> result;
  std::string failure;
};

/// One run_tag per (shift, m) on the MTL selection with m folds for every
/// task. The seed of each setting is the matching MTL grid entry's seed.
std::vector<TagSetting> tag_vs_fold_sweep(const Dataset& ds, const FoldAssignment& fa,
                                          const std::vector<int>& fold_counts,
                                          const std::vector<int>& shifts, const ModelConfig& cfg,
                                          std::uint64_t master_seed, const TagOptions& opts = {},
                                          int parallelism = 1);

/// shift, m, source_task ("SIGMA" for the domain-wide row), target_task,
/// mean_affinity (empty when undefined), n_records.
std::string tag_to_csv(const std::vector<TagSetting>& settings);
/// Settings with results rebuilt from the CSV (n_steps is not stored).
std::vector<TagSetting> parse_tag_csv(std::string_view text, std::size_t K);
std::string tag_failures_to_csv(const std::vector<TagSetting>& settings);

}  // namespace mtlc
