// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mtlc/data.hpp"

namespace mtlc {

/// Shared-trunk network: d -> r (ReLU) -> K logistic heads, trained with Adam.
struct ModelConfig {
  std::size_t d = 0;
  std::size_t r = 64;
  std::size_t K = 0;
  double learning_rate = 1e-4;
  int epochs = 40;
  std::size_t batch_size = 64;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the field.
  void validate() const;
  /// Hash over every field; stable across runs and platforms.
  std::string hash() const;
};

struct ModelParams {
  RowMatrix w1;        ///< r x d
  Eigen::VectorXd b1;  ///< r
  RowMatrix w2;        ///< K x r, row k is head k
  Eigen::VectorXd b2;  ///< K

  static ModelParams zeros(std::size_t d, std::size_t r, std::size_t K);
  bool all_finite() const;
  bool operator==(const ModelParams& other) const;
};

/// Gradient with respect to the shared trunk only.
struct TrunkGrad {
  RowMatrix w1;
  Eigen::VectorXd b1;
  double squared_norm() const { return w1.squaredNorm() + b1.squaredNorm(); }
};

struct TrainingManifest {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::size_t> n_i;  ///< realized labeled outcomes per task
};

struct TrainedModel {
  ModelConfig config;
  ModelParams params;
  TrainingManifest manifest;
};

/// A mini-batch: features with the label and loss-mask matrices (B x K).
struct Batch {
  RowMatrix x;
  std::vector<std::uint8_t> y;
  std::vector<std::uint8_t> use;
  std::size_t K = 0;

  std::size_t size() const noexcept { return static_cast<std::size_t>(x.rows()); }
  bool uses(std::size_t row, std::size_t task) const { return use[row * K + task] != 0; }
  std::size_t count(std::size_t task) const;
};

Batch make_batch(const Dataset& ds, const TrainingSelection& sel, std::span<const std::size_t> rows);

/// Scaled-uniform fan-in initialization (U(-1/sqrt(fan_in), 1/sqrt(fan_in)))
/// for weights, zero biases; deterministic in cfg.seed.
ModelParams init_params(const ModelConfig& cfg);

/// Masked binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7].
/// The training objective sums over used labels and divides by the batch size.
double batch_loss(const ModelParams& params, const Batch& batch);
/// Exact gradient of batch_loss with respect to every parameter.
ModelParams full_grad(const ModelParams& params, const Batch& batch);

/// Mean BCE of one task over its used labels in the batch; nullopt without labels.
std::optional<double> task_loss(const ModelParams& params, const Batch& batch, std::size_t task);
/// task_loss for every task from a single forward pass.
std::vector<std::optional<double>> task_losses(const ModelParams& params, const Batch& batch);
/// Trunk gradient of task_loss. Throws NoLabels.
TrunkGrad shared_grad(const ModelParams& params, const Batch& batch, std::size_t task);
/// Trunk gradient of the sum of task_loss over tasks with `include[k]` set
/// and at least one label.
TrunkGrad shared_grad_sum(const ModelParams& params, const Batch& batch,
                          std::span<const std::uint8_t> include);

struct StepContext {
  int epoch = 0;
  std::size_t step = 0;         ///< 1-based optimizer step
  std::size_t total_steps = 0;
  const ModelParams& params;    ///< parameters before this step's update
  const Batch& batch;
};
using StepObserver = std::function<void(const StepContext&)>;

/// Mini-batch Adam for exactly cfg.epochs epochs over the selected rows.
/// Shuffling and initialization are seeded, so equal inputs give bit-identical
/// parameters. Throws EmptySelection when nothing is selected and
/// NonFiniteLoss (naming the epoch) on divergence.
TrainedModel train(const Dataset& ds, const TrainingSelection& sel, const ModelConfig& cfg,
                   const StepObserver& observer = {});

/// n x K scores in (0, 1). Throws ShapeMismatch when the width is not d.
RowMatrix predict(const TrainedModel& model, const RowMatrix& x);
RowMatrix predict(const ModelParams& params, const RowMatrix& x);

/// Text checkpoint: a "# mtlc-checkpoint v1" line with config and manifest
/// fields, then CSV rows "tensor,row,col,value" with round-trip decimals.
std::string checkpoint_to_string(const TrainedModel& model);
TrainedModel checkpoint_from_string(std::string_view text);
void save_checkpoint(const std::filesystem::path& path, const TrainedModel& model);
TrainedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace mtlc
