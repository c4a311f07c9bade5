// SPDX-License-Identifier: Apache-2.0
#include <map>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cli/app.hpp"

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("mtlc"));
  spdlog::set_pattern("[%l] %v");

  CLI::App app{"mtlc: multi-task learning curves and transfer analysis"};
  app.require_subcommand(1, 1);

  mtlc::cli::CliOptions opts;
  std::string config;
  std::string out = ".";
  std::uint64_t seed = 0;
  int parallelism = 0;
  bool verbose = false;

  const std::map<std::string, std::string> blurbs = {
      {"synth", "generate the synthetic dataset"},
      {"split", "assign rows to folds"},
      {"grid", "train the STL, MTL and STAG grid"},
      {"fit", "fit learning curves to the grid"},
      {"tag", "record training-time task affinities"},
      {"report", "write the analysis tables"},
      {"pipeline", "run every stage in order"},
      {"forecast", "forecast gains from extra labels"},
  };
  for (const auto& name : mtlc::cli::command_names()) {
    CLI::App* sub = app.add_subcommand(name, blurbs.at(name));
    sub->add_option("--config", config, "JSON run config");
    sub->add_option("--out", out, "output directory")->capture_default_str();
    sub->add_option("--seed", seed, "override the master seed");
    sub->add_option("--parallelism", parallelism, "worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--resume", opts.resume, "reuse completed grid entries from the journal");
    sub->add_flag("-v,--verbose", verbose, "debug logging");
    if (name == "grid" || name == "pipeline") {
      sub->add_option("--max-jobs", opts.max_jobs, "stop the grid after this many new entries");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : mtlc::cli::kExitConfig;
  }

  if (verbose) spdlog::set_level(spdlog::level::debug);
  for (const auto* sub : app.get_subcommands()) opts.command = sub->get_name();
  if (!config.empty()) opts.config = config;
  opts.out = out;
  const CLI::App* sub = app.get_subcommand(opts.command);
  if (sub->count("--seed") > 0) opts.seed = seed;
  if (sub->count("--parallelism") > 0) opts.parallelism = parallelism;
  return mtlc::cli::run_command(opts);
}
