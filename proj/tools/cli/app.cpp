// SPDX-License-Identifier: Apache-2.0
#include "app.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <functional>
#include <iostream>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "config.hpp"
#include "mtlc/csv.hpp"
#include "mtlc/data.hpp"
#include "mtlc/grid.hpp"
#include "mtlc/hash.hpp"
#include "mtlc/report.hpp"
#include "mtlc/tag.hpp"

namespace mtlc::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kArtifactVersion = "0.3.0";
constexpr const char* kManifestName = "manifest.json";

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Context {
  CliOptions opts;
  RunConfig cfg;
  fs::path out;
  int parallelism = 1;
  json manifest;
  bool interrupted = false;

  fs::path data_file() const { return cfg.data_path.empty() ? out / "data.csv" : cfg.data_path; }
  fs::path file(const std::string& name) const { return out / name; }
  std::string report_stem(const std::string& name) const { return "reports/" + name + "_" + cfg.hash(); }

  std::string rel(const fs::path& p) const {
    const fs::path r = p.lexically_relative(out);
    if (!r.empty() && *r.begin() != "..") return r.generic_string();
    return p.generic_string();
  }
};

void require(const fs::path& p) {
  if (!fs::exists(p)) throw MissingInput("required input file is missing: " + p.string());
}

void write_out(const fs::path& p, std::string_view contents, std::vector<fs::path>& outputs) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file_atomic(p, contents);
  outputs.push_back(p);
}

Dataset load_dataset(const Context& ctx) {
  const fs::path p = ctx.data_file();
  require(p);
  CsvSchema schema;
  schema.group_column = ctx.cfg.group_column;
  schema.require_group = ctx.cfg.grouping == FoldGrouping::kGroup;
  return load_csv(p, schema);
}

FoldAssignment load_folds(const Context& ctx, const Dataset& ds) {
  const fs::path p = ctx.file("folds.csv");
  require(p);
  FoldAssignment fa = parse_folds_csv(read_file(p), ds);
  if (fa.n_folds != ctx.cfg.n_folds) {
    throw ConfigError("folds.csv has " + std::to_string(fa.n_folds) + " folds but the config asks for " +
                      std::to_string(ctx.cfg.n_folds) + "; rerun split");
  }
  return fa;
}

std::vector<GridObservation> load_grid(const Context& ctx) {
  const fs::path p = ctx.file("grid.csv");
  require(p);
  return parse_grid_csv(read_file(p));
}

std::size_t task_count(const std::vector<GridObservation>& obs) {
  std::size_t K = 0;
  for (const auto& o : obs) {
    for (const auto& r : o.records) K = std::max(K, r.task + 1);
  }
  if (K == 0) throw SchemaError("grid.csv contains no records");
  return K;
}

std::vector<StagedFit> load_fits(const Context& ctx, Metric metric) {
  const fs::path p = ctx.file("fits_" + std::string(metric_name(metric)) + ".csv");
  require(p);
  return parse_fits_csv(read_file(p));
}

// ---- stages -------------------------------------------------------------

using Outputs = std::vector<fs::path>;

Outputs stage_synth(Context& ctx) {
  if (!ctx.cfg.synth) throw ConfigError("config: 'data.synth' is required by the synth command");
  const SynthResult res = synth_generate(*ctx.cfg.synth);
  Outputs out;
  write_out(ctx.data_file(), dataset_to_csv(res.dataset), out);
  write_out(ctx.file("similarity.csv"), similarity_to_csv(res.similarity, res.dataset.task_names), out);
  spdlog::info("synth: {} rows, {} features, {} tasks", res.dataset.n_rows(), res.dataset.d(), res.dataset.K());
  return out;
}

Outputs stage_split(Context& ctx) {
  const Dataset ds = load_dataset(ctx);
  const FoldAssignment fa = assign_folds(ds, ctx.cfg.n_folds, ctx.cfg.grouping, derive_seed(ctx.cfg.seed, {101}));
  Outputs out;
  write_out(ctx.file("folds.csv"), folds_to_csv(ds, fa), out);
  return out;
}

Outputs stage_grid(Context& ctx) {
  const Dataset ds = load_dataset(ctx);
  const FoldAssignment fa = load_folds(ctx, ds);
  const GridPlan plan = plan_grid(ds.K(), ctx.cfg.n_folds, ctx.cfg.m_max, ctx.cfg.shifts, ctx.cfg.seed,
                                  ctx.cfg.stl, ctx.cfg.mtl);
  const fs::path journal = ctx.file("grid.journal.csv");
  if (!ctx.opts.resume && fs::exists(journal)) fs::remove(journal);

  GridRunOptions run;
  run.parallelism = ctx.parallelism;
  run.journal = journal;
  run.max_new_jobs = ctx.opts.max_jobs;
  spdlog::info("grid: {} entries, parallelism {}", plan.entries.size(), ctx.parallelism);
  const GridResult res = execute_grid(plan, ds, fa, run);
  spdlog::info("grid: {} reused, {} executed, {} failed", res.reused, res.executed, res.failures.size());
  if (!res.complete) {
    ctx.interrupted = true;
    std::cout << "grid: stopped after " << res.executed << " new entries; rerun with --resume\n";
    return {};
  }
  Outputs out;
  write_out(ctx.file("grid.csv"), grid_to_csv(res.observations), out);
  write_out(ctx.file("grid_failures.csv"), grid_failures_to_csv(res.failures), out);
  write_out(ctx.file("grid_averaged.csv"), averaged_to_csv(average_over_shifts(res.observations)), out);
  fs::remove(journal);
  if (!res.failures.empty()) spdlog::warn("grid: {} entries failed, see grid_failures.csv", res.failures.size());
  return out;
}

Outputs stage_fit(Context& ctx) {
  const auto obs = load_grid(ctx);
  const std::size_t K = task_count(obs);
  const auto averaged = average_over_shifts(obs);
  FitOptions fo = ctx.cfg.fit;
  fo.seed = derive_seed(ctx.cfg.seed, {202});
  Outputs out;
  for (Metric metric : {Metric::kAuroc, Metric::kAupr}) {
    const std::string name(metric_name(metric));
    const GridFits gf = fit_grid(averaged, K, metric, fo, ctx.parallelism);
    if (gf.fits.empty()) throw UnderDetermined("no task could be fitted for " + name);
    write_out(ctx.file("fits_" + name + ".csv"), fits_to_csv(gf.fits), out);
    write_out(ctx.file("fit_failures_" + name + ".csv"), fit_failures_to_csv(gf.failures), out);
    spdlog::info("fit[{}]: {} tasks fitted, {} failures", name, gf.fits.size(), gf.failures.size());
  }
  return out;
}

Outputs stage_tag(Context& ctx) {
  const Dataset ds = load_dataset(ctx);
  const FoldAssignment fa = load_folds(ctx, ds);
  const auto settings = tag_vs_fold_sweep(ds, fa, ctx.cfg.tag_folds(), ctx.cfg.shifts, ctx.cfg.mtl, ctx.cfg.seed,
                                          ctx.cfg.tag, ctx.parallelism);
  Outputs out;
  write_out(ctx.file("tag.csv"), tag_to_csv(settings), out);
  write_out(ctx.file("tag_failures.csv"), tag_failures_to_csv(settings), out);
  return out;
}

void emit_report(Context& ctx, const std::string& name, const std::function<Report()>& make, Outputs& out) {
  const std::string stem = ctx.report_stem(name);
  const fs::path status = ctx.file(stem + ".status.txt");
  try {
    const Report r = make();
    write_out(ctx.file(stem + ".csv"), r.csv, out);
    write_out(ctx.file(stem + ".md"), r.markdown, out);
    for (const auto& [key, csv] : r.extra_csv) write_out(ctx.file(stem + "_" + key + ".csv"), csv, out);
    if (fs::exists(status)) fs::remove(status);
  } catch (const MissingInput&) {
    throw;
  } catch (const Error& e) {
    spdlog::warn("report {}: {}", name, e.what());
    write_out(status, std::string(e.what()) + "\n", out);
  }
}

Outputs stage_report(Context& ctx) {
  for (const char* f : {"grid.csv", "fits_auroc.csv", "fits_aupr.csv", "tag.csv"}) require(ctx.file(f));
  const auto obs = load_grid(ctx);
  const std::size_t K = task_count(obs);
  const auto averaged = average_over_shifts(obs);
  const GridFits auroc{load_fits(ctx, Metric::kAuroc), {}};
  const GridFits aupr{load_fits(ctx, Metric::kAupr), {}};
  const auto tag = parse_tag_csv(read_file(ctx.file("tag.csv")), K);
  FitOptions fo = ctx.cfg.fit;
  fo.seed = derive_seed(ctx.cfg.seed, {303});

  Outputs out;
  emit_report(ctx, "family_selection", [&] { return family_selection_report(obs, K, ctx.cfg.families, fo); }, out);
  emit_report(ctx, "stl_vs_mtl", [&] { return stl_vs_mtl_report(auroc, aupr, averaged, K, fo); }, out);
  emit_report(ctx, "tag_vs_mtlc", [&] { return tag_vs_mtlc_report(tag, auroc, aupr, K); }, out);
  return out;
}

Outputs stage_forecast(Context& ctx) {
  for (const char* f : {"grid.csv", "fits_auroc.csv", "fits_aupr.csv"}) require(ctx.file(f));
  const auto obs = load_grid(ctx);
  const std::size_t K = task_count(obs);
  const auto averaged = average_over_shifts(obs);
  std::map<int, std::vector<double>> budgets;
  if (ctx.cfg.budgets.empty()) {
    budgets = one_fold_budgets(averaged, K);
  } else {
    for (std::size_t t = 0; t < K; ++t) budgets[static_cast<int>(t)] = ctx.cfg.budgets;
  }
  Outputs out;
  for (Metric metric : {Metric::kAuroc, Metric::kAupr}) {
    const auto fits = load_fits(ctx, metric);
    emit_report(ctx, "forecast_" + std::string(metric_name(metric)),
                [&] { return forecast_report(gain_forecast(fits, averaged, K, budgets)); }, out);
  }
  return out;
}

// ---- stage graph and manifest --------------------------------------------

struct Stage {
  std::string name;
  std::vector<std::string> deps;
  std::function<std::vector<fs::path>(const Context&)> inputs;
  std::function<Outputs(Context&)> run;
};

std::vector<Stage> all_stages() {
  auto files = [](std::vector<std::string> names, bool with_data) {
    return [names, with_data](const Context& ctx) {
      std::vector<fs::path> v;
      if (with_data) v.push_back(ctx.data_file());
      for (const auto& n : names) v.push_back(ctx.file(n));
      return v;
    };
  };
  return {
      {"synth", {}, files({}, false), stage_synth},
      {"split", {"synth"}, files({}, true), stage_split},
      {"grid", {"split"}, files({"folds.csv"}, true), stage_grid},
      {"fit", {"grid"}, files({"grid.csv"}, false), stage_fit},
      {"tag", {"split"}, files({"folds.csv"}, true), stage_tag},
      {"report", {"grid", "fit", "tag"}, files({"grid.csv", "fits_auroc.csv", "fits_aupr.csv", "tag.csv"}, false),
       stage_report},
      {"forecast", {"grid", "fit"}, files({"grid.csv", "fits_auroc.csv", "fits_aupr.csv"}, false), stage_forecast},
  };
}

json load_manifest(const fs::path& out) {
  const fs::path p = out / kManifestName;
  if (!fs::exists(p)) return json::object();
  try {
    json m = json::parse(read_file(p));
    if (m.is_object()) return m;
  } catch (const json::exception&) {
  }
  spdlog::warn("ignoring unreadable {}", p.string());
  return json::object();
}

void save_manifest(Context& ctx) {
  ctx.manifest["finished"] = utc_now();
  fs::create_directories(ctx.out);
  write_file_atomic(ctx.out / kManifestName, ctx.manifest.dump(2) + "\n");
}

json digests(const Context& ctx, const std::vector<fs::path>& files) {
  json d = json::object();
  for (const auto& f : files) d[ctx.rel(f)] = digest_file(f);
  return d;
}

bool files_match(const Context& ctx, const json& recorded) {
  if (!recorded.is_object()) return false;
  for (const auto& [name, digest] : recorded.items()) {
    fs::path p = name;
    if (p.is_relative()) p = ctx.out / p;
    if (!fs::exists(p) || digest_file(p) != digest.get<std::string>()) return false;
  }
  return true;
}

bool up_to_date(const Context& ctx, const Stage& stage) {
  const auto& stages = ctx.manifest.value("stages", json::object());
  if (!stages.contains(stage.name)) return false;
  const json& rec = stages.at(stage.name);
  if (rec.value("hash", "") != ctx.cfg.stage_hash(stage.name)) return false;
  const json recorded_in = rec.value("inputs", json::object());
  for (const auto& f : stage.inputs(ctx)) {
    if (!recorded_in.contains(ctx.rel(f))) return false;
  }
  return files_match(ctx, recorded_in) && files_match(ctx, rec.value("outputs", json::object()));
}

void run_stage(Context& ctx, const Stage& stage) {
  const auto inputs = stage.inputs(ctx);
  Outputs outputs;
  try {
    for (const auto& f : inputs) require(f);
    outputs = stage.run(ctx);
  } catch (const Error& e) {
    throw Error(e.code(), "stage " + stage.name + ": " + e.detail());
  }
  if (ctx.interrupted) return;
  ctx.manifest["stages"][stage.name] = {{"hash", ctx.cfg.stage_hash(stage.name)},
                                        {"inputs", digests(ctx, inputs)},
                                        {"outputs", digests(ctx, outputs)},
                                        {"finished", utc_now()}};
  save_manifest(ctx);
}

const Stage& find_stage(const std::vector<Stage>& stages, const std::string& name) {
  for (const auto& s : stages) {
    if (s.name == name) return s;
  }
  throw ConfigError("unknown stage " + name);
}

void run_pipeline(Context& ctx) {
  const auto stages = all_stages();
  const bool with_synth = ctx.cfg.synth && ctx.cfg.data_path.empty();
  std::set<std::string> ran;
  bool any = false;
  for (const auto& stage : stages) {
    if (stage.name == "synth" && !with_synth) continue;
    bool dirty = !up_to_date(ctx, stage);
    for (const auto& d : stage.deps) dirty = dirty || ran.count(d) > 0;
    if (!dirty) {
      std::cout << stage.name << ": up to date\n";
      continue;
    }
    spdlog::info("pipeline: running {}", stage.name);
    run_stage(ctx, stage);
    if (ctx.interrupted) return;
    ran.insert(stage.name);
    any = true;
  }
  if (!any) std::cout << "pipeline: up to date\n";
}

Context make_context(const CliOptions& opts) {
  Context ctx;
  ctx.opts = opts;
  ctx.out = opts.out;
  json doc = opts.config ? read_config_document(*opts.config) : json::object();
  if (opts.seed) doc["seed"] = *opts.seed;
  ctx.cfg = parse_config(doc, opts.config ? opts.config->parent_path() : fs::current_path());
  ctx.parallelism = resolve_parallelism(opts.parallelism, ctx.cfg.parallelism_cap);
  fs::create_directories(ctx.out);
  ctx.manifest = load_manifest(ctx.out);
  ctx.manifest["artifact_version"] = kArtifactVersion;
  ctx.manifest["config_hash"] = ctx.cfg.hash();
  ctx.manifest["config"] = ctx.cfg.to_json();
  ctx.manifest["master_seed"] = ctx.cfg.seed;
  ctx.manifest["command"] = opts.command;
  ctx.manifest["started"] = utc_now();
  if (!ctx.manifest.contains("stages")) ctx.manifest["stages"] = json::object();
  json inputs = json::object();
  if (opts.config) inputs[ctx.rel(*opts.config)] = digest_file(*opts.config);
  if (fs::exists(ctx.data_file())) inputs[ctx.rel(ctx.data_file())] = digest_file(ctx.data_file());
  ctx.manifest["inputs"] = inputs;
  return ctx;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"synth", "split", "grid",     "fit",
                                                 "tag",   "report", "pipeline", "forecast"};
  return names;
}

int exit_code_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kConfigError:
    case ErrorCode::kParseError:
    case ErrorCode::kSchemaError:
    case ErrorCode::kArityMismatch:
    case ErrorCode::kDomainError:
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kSpecMismatch:
    case ErrorCode::kEmptySelection:
      return kExitConfig;
    case ErrorCode::kMissingInput:
      return kExitMissingInput;
    case ErrorCode::kUnderDetermined:
    case ErrorCode::kNonFinite:
    case ErrorCode::kUndefined:
    case ErrorCode::kDegenerateInput:
    case ErrorCode::kNonFiniteLoss:
    case ErrorCode::kNoLabels:
    case ErrorCode::kNoDefinedPairs:
    case ErrorCode::kInsufficientTasks:
    case ErrorCode::kInsufficientPairs:
      return kExitNumerical;
  }
  return 1;
}

int resolve_parallelism(std::optional<int> flag, std::optional<int> config_cap) {
  if (flag) {
    if (*flag < 1) throw ConfigError("--parallelism must be >= 1");
    return *flag;
  }
  if (const char* env = std::getenv("MTLC_PARALLELISM"); env && *env) {
    const std::int64_t v = parse_int(env);
    if (v < 1) throw ConfigError("MTLC_PARALLELISM must be >= 1");
    return static_cast<int>(v);
  }
  int n = static_cast<int>(std::max(1U, std::thread::hardware_concurrency()));
  if (config_cap) n = std::min(n, *config_cap);
  return n;
}

int run_command(const CliOptions& opts) {
  try {
    Context ctx = make_context(opts);
    if (opts.command == "pipeline") {
      run_pipeline(ctx);
    } else {
      const auto stages = all_stages();
      run_stage(ctx, find_stage(stages, opts.command));
    }
    if (!ctx.interrupted) save_manifest(ctx);
    return kExitOk;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}

}  // namespace mtlc::cli
