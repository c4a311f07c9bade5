// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mtlc/error.hpp"

namespace mtlc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitMissingInput = 3;
inline constexpr int kExitNumerical = 4;

struct CliOptions {
  std::string command;
  std::optional<std::filesystem::path> config;
  std::filesystem::path out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<int> parallelism;
  bool resume = false;
  std::size_t max_jobs = 0;  ///< grid: stop after this many new entries (0 = no limit)
};

const std::vector<std::string>& command_names();

int exit_code_for(ErrorCode code) noexcept;

/// flag > MTLC_PARALLELISM > hardware threads capped by the config.
int resolve_parallelism(std::optional<int> flag, std::optional<int> config_cap);

/// Runs one command and returns the process exit code. Errors are logged,
/// not thrown.
int run_command(const CliOptions& opts);

}  // namespace mtlc::cli
