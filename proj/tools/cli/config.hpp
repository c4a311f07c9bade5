// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtlc/curves.hpp"
#include "mtlc/data.hpp"
#include "mtlc/fitter.hpp"
#include "mtlc/learner.hpp"
#include "mtlc/tag.hpp"

namespace mtlc::cli {

/// Everything a run needs. One JSON file drives all stages; unknown keys are
/// rejected so typos surface as ConfigError.
struct RunConfig {
  std::uint64_t seed = 1;
  std::optional<int> parallelism_cap;

  // data
  std::filesystem::path data_path;  ///< empty: <out>/data.csv
  std::string group_column = "group";
  std::optional<SynthConfig> synth;

  // split
  int n_folds = 5;
  FoldGrouping grouping = FoldGrouping::kRow;

  // grid
  int m_max = 4;
  std::vector<int> shifts = {0};
  ModelConfig stl;
  ModelConfig mtl;

  // fit
  FitOptions fit;
  std::vector<CurveFamily> families = {CurveFamily::kExp4, CurveFamily::kExp3_1, CurveFamily::kIlog2};

  // tag
  TagOptions tag;
  std::vector<int> tag_fold_counts;  ///< empty: 1..m_max

  // forecast
  std::vector<double> budgets;  ///< empty: one fold per task

  /// Canonical JSON with defaults filled in; parallelism is excluded.
  nlohmann::json to_json() const;
  std::string hash() const;
  /// Hash of the settings a stage depends on (split, grid, fit, tag, report).
  std::string stage_hash(std::string_view stage) const;
  std::vector<int> tag_folds() const;
};

/// Parses a config document; relative data paths resolve against base_dir.
RunConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
/// Reads a JSON document; MissingInput if absent, ConfigError if malformed.
nlohmann::json read_config_document(const std::filesystem::path& path);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace mtlc::cli
