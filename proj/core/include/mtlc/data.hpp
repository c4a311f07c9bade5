// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mtlc {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense features with a maskable K-task binary label matrix.
struct Dataset {
  RowMatrix features;                   ///< n_rows x d
  std::vector<std::uint8_t> labels;     ///< n_rows x K, row-major, {0,1}
  std::vector<std::uint8_t> present;    ///< n_rows x K, row-major
  std::optional<std::vector<std::string>> group_id;
  std::vector<std::string> feature_names;  ///< without the "f_" prefix
  std::vector<std::string> task_names;     ///< without the "y_" prefix

  std::size_t n_rows() const noexcept { return static_cast<std::size_t>(features.rows()); }
  std::size_t d() const noexcept { return static_cast<std::size_t>(features.cols()); }
  std::size_t K() const noexcept { return task_names.size(); }

  std::uint8_t label(std::size_t row, std::size_t task) const { return labels[row * K() + task]; }
  bool is_present(std::size_t row, std::size_t task) const { return present[row * K() + task] != 0; }

  /// Throws SchemaError on shape mismatches, d or K == 0, or a task without labels.
  void validate() const;
};

/// Which columns of a dataset CSV to read. Empty lists select by prefix
/// ("f_" features, "y_" tasks).
struct CsvSchema {
  std::vector<std::string> feature_columns;
  std::vector<std::string> task_columns;
  std::string group_column = "group";
  bool require_group = false;
};

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
Dataset parse_dataset_csv(std::string_view text, const CsvSchema& schema = {});
/// Canonical form: f_* columns, y_* columns, then "group" when present;
/// shortest round-trip numbers; empty cell for a missing label.
std::string dataset_to_csv(const Dataset& ds);
void save_csv(const std::filesystem::path& path, const Dataset& ds);
std::string dataset_digest(const Dataset& ds);

struct SynthConfig {
  std::size_t n_rows = 2000;
  std::size_t d = 16;
  std::size_t K = 8;
  /// Latent group of every task (size K). Empty: n_groups contiguous blocks.
  std::vector<int> group_of_task;
  int n_groups = 2;
  double within_group_angle = 0.2;   ///< radians in [0, pi/2]
  std::vector<double> label_rate = {0.5};  ///< one value or one per task, in (0,1]
  double mnar_strength = 0.0;
  double noise_sd = 0.5;
  std::uint64_t seed = 1;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  std::vector<int> groups() const;
};

struct SynthResult {
  Dataset dataset;
  RowMatrix similarity;    ///< K x K cosine of task weight vectors
  RowMatrix task_weights;  ///< K x d unit vectors
  std::vector<int> group_of_task;
};

/// Features ~ N(0, I). Task weight = cos(theta) * group direction +
/// sin(theta) * private direction (unit-normalized). Group directions have
/// disjoint coordinate support, so distinct groups are exactly orthogonal.
/// Labels ~ Bernoulli(sigmoid(w.x / noise_sd)); presence probability is
/// sigmoid(logit(label_rate) + mnar_strength * w.x).
SynthResult synth_generate(const SynthConfig& cfg);

std::string similarity_to_csv(const RowMatrix& similarity, std::span<const std::string> names);

enum class FoldGrouping { kRow, kGroup };

/// Fold of every row plus the permutation shift. Under shift s the ordered
/// fold sequence is s, s+1, ..., s+n-1 (mod n); the last one is the test fold.
struct FoldAssignment {
  int n_folds = 0;
  std::vector<int> fold_of_row;
  int shift = 0;
  FoldGrouping grouping = FoldGrouping::kRow;

  int fold_at(int position) const noexcept { return (position + shift) % n_folds; }
  int test_fold() const noexcept { return fold_at(n_folds - 1); }
  FoldAssignment with_shift(int s) const;
};

/// Seeded uniform fold per row, or per group (all rows of a group share it).
FoldAssignment assign_folds(const Dataset& ds, int n_folds, FoldGrouping grouping,
                            std::uint64_t seed);

/// Fold file: row_index, group_id, fold.
std::string folds_to_csv(const Dataset& ds, const FoldAssignment& fa);
FoldAssignment parse_folds_csv(std::string_view text, const Dataset& ds);

/// Per-task label selection used for one training run.
struct TrainingSelection {
  std::size_t n_tasks = 0;
  std::vector<std::uint8_t> use;     ///< n_rows x K: label enters the loss
  std::vector<std::size_t> rows;     ///< rows with at least one used label, ascending
  std::vector<std::size_t> counts;   ///< realized labeled outcomes per task
  int extra_task = -1;
  std::size_t extra_count = 0;       ///< labels added by the extra fold

  bool uses(std::size_t row, std::size_t task) const { return use[row * n_tasks + task] != 0; }
  std::size_t total() const noexcept;
};

/// Task i uses its present labels from the first fold_counts[i] folds under
/// the shift. With extra_task = j, task j additionally gets fold number
/// fold_counts[j] + 1. Throws ConfigError if a selection would reach the test fold.
TrainingSelection training_subset(const Dataset& ds, const FoldAssignment& fa,
                                  std::span<const int> fold_counts,
                                  std::optional<std::size_t> extra_task = std::nullopt);

std::vector<std::size_t> test_rows(const FoldAssignment& fa);

}  // namespace mtlc
