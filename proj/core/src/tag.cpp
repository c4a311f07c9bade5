// SPDX-License-Identifier: Apache-2.0
#include "mtlc/tag.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <spdlog/spdlog.h>

#include "mtlc/csv.hpp"
#include "mtlc/error.hpp"
#include "mtlc/grid.hpp"
#include "parallel.hpp"

namespace mtlc {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

ModelParams lookahead(const ModelParams& params, const TrunkGrad& g, double lr) {
  ModelParams out = params;
  out.w1 -= lr * g.w1;
  out.b1 -= lr * g.b1;
  return out;
}

}  // namespace

AffinityRecord affinity_step(const ModelParams& params, const Batch& batch, double lookahead_lr) {
  const std::size_t K = batch.K;
  const auto Ki = static_cast<Eigen::Index>(K);
  AffinityRecord rec;
  rec.z = RowMatrix::Constant(Ki, Ki, kNaN);
  rec.z_domain = Eigen::VectorXd::Constant(Ki, kNaN);

  const std::vector<std::optional<double>> base = task_losses(params, batch);
  auto target_ok = [&](std::size_t i) { return base[i] && *base[i] > 0.0; };
  bool any = false;

  for (std::size_t j = 0; j < K; ++j) {
    if (!base[j]) continue;
    const ModelParams moved = lookahead(params, shared_grad(params, batch, j), lookahead_lr);
    const std::vector<std::optional<double>> after = task_losses(moved, batch);
    for (std::size_t i = 0; i < K; ++i) {
      if (i == j || !target_ok(i)) continue;
      rec.z(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = 1.0 - *after[i] / *base[i];
      any = true;
    }
  }

  std::vector<std::uint8_t> include(K);
  for (std::size_t i = 0; i < K; ++i) {
    if (!target_ok(i)) continue;
    bool others = false;
    for (std::size_t k = 0; k < K; ++k) {
      include[k] = k != i && base[k].has_value();
      others = others || include[k];
    }
    if (!others) continue;
    const ModelParams moved = lookahead(params, shared_grad_sum(params, batch, include), lookahead_lr);
    const std::vector<std::optional<double>> after = task_losses(moved, batch);
    rec.z_domain[static_cast<Eigen::Index>(i)] = 1.0 - *after[i] / *base[i];
  }

  if (!any) throw NoDefinedPairs("batch has no task pair with defined losses");
  return rec;
}

TagResult run_tag(const Dataset& ds, const TrainingSelection& sel, const ModelConfig& cfg,
                  const TagOptions& opts) {
  if (opts.every < 1) throw ConfigError("tag.every must be >= 1");
  const double lr = opts.lookahead_lr.value_or(cfg.learning_rate);
  if (!(lr >= 0.0)) throw ConfigError("tag.lookahead_lr must be >= 0");
  if (opts.epochs && *opts.epochs < 1) throw ConfigError("tag.epochs must be >= 1");
  ModelConfig run_cfg = cfg;
  if (opts.epochs) run_cfg.epochs = std::min(cfg.epochs, *opts.epochs);
  const std::size_t K = ds.K();
  const auto Ki = static_cast<Eigen::Index>(K);

  RowMatrix sum = RowMatrix::Zero(Ki, Ki);
  Eigen::VectorXd dsum = Eigen::VectorXd::Zero(Ki);
  TagResult res;
  res.n_records.assign(K * K, 0);
  res.domain_records.assign(K, 0);

  auto observer = [&](const StepContext& ctx) {
    const bool due = ctx.step % opts.every == 0;
    const bool forced = ctx.step == ctx.total_steps && res.n_steps == 0;
    if (!due && !forced) return;
    AffinityRecord rec;
    try {
      rec = affinity_step(ctx.params, ctx.batch, lr);
    } catch (const NoDefinedPairs&) {
      return;
    }
    ++res.n_steps;
    for (Eigen::Index j = 0; j < Ki; ++j) {
      for (Eigen::Index i = 0; i < Ki; ++i) {
        if (!std::isfinite(rec.z(j, i))) continue;
        sum(j, i) += rec.z(j, i);
        ++res.n_records[static_cast<std::size_t>(j) * K + static_cast<std::size_t>(i)];
      }
      if (std::isfinite(rec.z_domain[j])) {
        dsum[j] += rec.z_domain[j];
        ++res.domain_records[static_cast<std::size_t>(j)];
      }
    }
  };
  train(ds, sel, run_cfg, observer);

  res.mean = RowMatrix::Constant(Ki, Ki, kNaN);
  res.domain_mean = Eigen::VectorXd::Constant(Ki, kNaN);
  for (Eigen::Index j = 0; j < Ki; ++j) {
    for (Eigen::Index i = 0; i < Ki; ++i) {
      const std::size_t n = res.n_records[static_cast<std::size_t>(j) * K + static_cast<std::size_t>(i)];
      if (n > 0) res.mean(j, i) = sum(j, i) / static_cast<double>(n);
    }
    const std::size_t n = res.domain_records[static_cast<std::size_t>(j)];
    if (n > 0) res.domain_mean[j] = dsum[j] / static_cast<double>(n);
  }
  return res;
}

std::vector<TagSetting> tag_vs_fold_sweep(const Dataset& ds, const FoldAssignment& fa,
                                          const std::vector<int>& fold_counts,
                                          const std::vector<int>& shifts, const ModelConfig& cfg,
                                          std::uint64_t master_seed, const TagOptions& opts,
                                          int parallelism) {
  std::vector<TagSetting> settings;
  for (int s : shifts) {
    for (int m : fold_counts) settings.push_back({s, m, std::nullopt, {}});
  }
  std::sort(settings.begin(), settings.end(), [](const TagSetting& a, const TagSetting& b) {
    return std::pair(a.shift, a.m) < std::pair(b.shift, b.m);
  });

  detail::parallel_for(settings.size(), parallelism, [&](std::size_t i) {
    TagSetting& st = settings[i];
    try {
      const GridSpecKey key{st.shift, GridKind::kMtl, st.m, -1, -1};
      const TrainingSelection sel = entry_selection(key, ds, fa);
      ModelConfig c = cfg;
      c.d = ds.d();
      c.K = ds.K();
      c.seed = entry_seed(master_seed, key);
      st.result = run_tag(ds, sel, c, opts);
    } catch (const std::exception& e) {
      spdlog::warn("TAG setting shift={} m={} failed: {}", st.shift, st.m, e.what());
      st.failure = e.what();
    }
  });
  return settings;
}

std::string tag_to_csv(const std::vector<TagSetting>& settings) {
  CsvTable table;
  table.header = {"shift", "m", "source_task", "target_task", "mean_affinity", "n_records"};
  for (const TagSetting& st : settings) {
    if (!st.result) continue;
    const TagResult& r = *st.result;
    const auto K = static_cast<std::size_t>(r.mean.rows());
    const std::string shift = std::to_string(st.shift), m = std::to_string(st.m);
    for (std::size_t j = 0; j < K; ++j) {
      for (std::size_t i = 0; i < K; ++i) {
        if (i == j) continue;
        const std::size_t n = r.n_records[j * K + i];
        table.rows.push_back({shift, m, std::to_string(j), std::to_string(i),
                              n ? format_double(r.mean(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)))
                                : std::string(),
                              std::to_string(n)});
      }
    }
    for (std::size_t i = 0; i < K; ++i) {
      const std::size_t n = r.domain_records[i];
      table.rows.push_back({shift, m, "SIGMA", std::to_string(i),
                            n ? format_double(r.domain_mean[static_cast<Eigen::Index>(i)]) : std::string(),
                            std::to_string(n)});
    }
  }
  return to_csv(table);
}

std::vector<TagSetting> parse_tag_csv(std::string_view text, std::size_t K) {
  const CsvTable table = parse_csv(text);
  const std::size_t cs = table.require_column("shift"), cm = table.require_column("m"),
                    cj = table.require_column("source_task"), ci = table.require_column("target_task"),
                    cv = table.require_column("mean_affinity"), cn = table.require_column("n_records");
  const auto Ki = static_cast<Eigen::Index>(K);
  std::map<std::pair<int, int>, TagResult> by_setting;
  for (const auto& row : table.rows) {
    const std::pair key(static_cast<int>(parse_int(row[cs])), static_cast<int>(parse_int(row[cm])));
    auto [it, inserted] = by_setting.try_emplace(key);
    TagResult& r = it->second;
    if (inserted) {
      r.mean = RowMatrix::Constant(Ki, Ki, kNaN);
      r.n_records.assign(K * K, 0);
      r.domain_mean = Eigen::VectorXd::Constant(Ki, kNaN);
      r.domain_records.assign(K, 0);
    }
    const auto i = parse_int(row[ci]);
    if (i < 0 || i >= Ki) throw ParseError("TAG target_task out of range: " + row[ci]);
    const auto n = static_cast<std::size_t>(parse_int(row[cn]));
    const double v = row[cv].empty() ? kNaN : parse_double(row[cv]);
    if (row[cj] == "SIGMA") {
      r.domain_mean[i] = v;
      r.domain_records[static_cast<std::size_t>(i)] = n;
      continue;
    }
    const auto j = parse_int(row[cj]);
    if (j < 0 || j >= Ki || j == i) throw ParseError("TAG source_task invalid: " + row[cj]);
    r.mean(j, i) = v;
    r.n_records[static_cast<std::size_t>(j) * K + static_cast<std::size_t>(i)] = n;
  }
  std::vector<TagSetting> out;
  for (auto& [key, r] : by_setting) out.push_back({key.first, key.second, std::move(r), {}});
  return out;
}

std::string tag_failures_to_csv(const std::vector<TagSetting>& settings) {
  CsvTable table;
  table.header = {"shift", "m", "reason"};
  for (const TagSetting& st : settings) {
    if (!st.result) table.rows.push_back({std::to_string(st.shift), std::to_string(st.m), st.failure});
  }
  return to_csv(table);
}

}  // namespace mtlc
