// SPDX-License-Identifier: Apache-2.0
#include "mtlc/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "mtlc/csv.hpp"
#include "mtlc/error.hpp"
#include "mtlc/hash.hpp"

namespace mtlc {

namespace {

constexpr std::string_view kFeaturePrefix = "f_";
constexpr std::string_view kTaskPrefix = "y_";

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

std::string cell_location(std::size_t row, const std::string& column) {
  return "row " + std::to_string(row + 1) + ", column '" + column + "'";
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

void Dataset::validate() const {
  if (d() == 0) throw SchemaError("dataset has no feature columns");
  if (K() == 0) throw SchemaError("dataset has no task columns");
  if (feature_names.size() != d()) throw SchemaError("feature name count does not match d");
  const std::size_t cells = n_rows() * K();
  if (labels.size() != cells || present.size() != cells) {
    throw SchemaError("label matrix shape does not match n_rows x K");
  }
  if (group_id && group_id->size() != n_rows()) throw SchemaError("group column length mismatch");
  for (std::size_t k = 0; k < K(); ++k) {
    bool any = false;
    for (std::size_t r = 0; r < n_rows() && !any; ++r) any = is_present(r, k);
    if (!any) throw SchemaError("task '" + task_names[k] + "' has no present labels");
  }
}

Dataset parse_dataset_csv(std::string_view text, const CsvSchema& schema) {
  const CsvTable table = parse_csv(text);

  std::vector<std::size_t> fcols, tcols;
  Dataset ds;
  auto pick = [&](const std::vector<std::string>& declared, std::string_view prefix,
                  std::vector<std::size_t>& cols, std::vector<std::string>& names) {
    if (declared.empty()) {
      for (std::size_t i = 0; i < table.header.size(); ++i) {
        if (starts_with(table.header[i], prefix)) {
          cols.push_back(i);
          names.push_back(table.header[i].substr(prefix.size()));
        }
      }
      return;
    }
    for (const std::string& name : declared) {
      const auto col = table.column(name);
      if (!col) throw SchemaError("declared column '" + name + "' is absent");
      cols.push_back(*col);
      names.push_back(starts_with(name, prefix) ? name.substr(prefix.size()) : name);
    }
  };
  pick(schema.feature_columns, kFeaturePrefix, fcols, ds.feature_names);
  pick(schema.task_columns, kTaskPrefix, tcols, ds.task_names);
  if (fcols.empty()) throw SchemaError("no feature columns (prefix 'f_')");
  if (tcols.empty()) throw SchemaError("no task columns (prefix 'y_')");

  const auto gcol = table.column(schema.group_column);
  if (schema.require_group && !gcol) {
    throw SchemaError("group column '" + schema.group_column + "' is absent");
  }

  const std::size_t n = table.rows.size();
  const std::size_t K = tcols.size();
  ds.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(fcols.size()));
  ds.labels.assign(n * K, 0);
  ds.present.assign(n * K, 0);
  if (gcol) ds.group_id.emplace(n);

  for (std::size_t r = 0; r < n; ++r) {
    const auto& row = table.rows[r];
    for (std::size_t j = 0; j < fcols.size(); ++j) {
      const std::string& cell = row[fcols[j]];
      try {
        ds.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = parse_double(cell);
      } catch (const ParseError&) {
        throw ParseError("malformed feature '" + cell + "' at " +
                         cell_location(r, table.header[fcols[j]]));
      }
    }
    for (std::size_t k = 0; k < K; ++k) {
      const std::string& cell = row[tcols[k]];
      if (cell.empty()) continue;
      if (cell != "0" && cell != "1") {
        throw ParseError("label '" + cell + "' is not 0/1 at " +
                         cell_location(r, table.header[tcols[k]]));
      }
      ds.labels[r * K + k] = cell == "1";
      ds.present[r * K + k] = 1;
    }
    if (gcol) (*ds.group_id)[r] = row[*gcol];
  }
  ds.validate();
  return ds;
}

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  try {
    return parse_dataset_csv(read_file(path), schema);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string dataset_to_csv(const Dataset& ds) {
  CsvTable table;
  for (const auto& f : ds.feature_names) table.header.push_back(std::string(kFeaturePrefix) + f);
  for (const auto& t : ds.task_names) table.header.push_back(std::string(kTaskPrefix) + t);
  if (ds.group_id) table.header.push_back("group");
  table.rows.reserve(ds.n_rows());
  for (std::size_t r = 0; r < ds.n_rows(); ++r) {
    std::vector<std::string> row;
    row.reserve(table.header.size());
    for (std::size_t j = 0; j < ds.d(); ++j) {
      row.push_back(format_double(ds.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j))));
    }
    for (std::size_t k = 0; k < ds.K(); ++k) {
      row.push_back(ds.is_present(r, k) ? (ds.label(r, k) ? "1" : "0") : "");
    }
    if (ds.group_id) row.push_back((*ds.group_id)[r]);
    table.rows.push_back(std::move(row));
  }
  return to_csv(table);
}

void save_csv(const std::filesystem::path& path, const Dataset& ds) {
  write_file_atomic(path, dataset_to_csv(ds));
}

std::string dataset_digest(const Dataset& ds) { return Fnv1a().update(dataset_to_csv(ds)).hex(); }

void SynthConfig::validate() const {
  if (n_rows == 0) throw ConfigError("synth.n_rows must be positive");
  if (d == 0) throw ConfigError("synth.d must be positive");
  if (K == 0) throw ConfigError("synth.K must be positive");
  if (!(within_group_angle >= 0.0 && within_group_angle <= std::numbers::pi / 2)) {
    throw ConfigError("synth.within_group_angle must lie in [0, pi/2]");
  }
  if (label_rate.size() != 1 && label_rate.size() != K) {
    throw ConfigError("synth.label_rate must have 1 or K entries");
  }
  for (double r : label_rate) {
    if (!(r > 0.0 && r <= 1.0)) throw ConfigError("synth.label_rate entries must lie in (0, 1]");
  }
  if (!(mnar_strength >= 0.0)) throw ConfigError("synth.mnar_strength must be >= 0");
  if (!(noise_sd > 0.0)) throw ConfigError("synth.noise_sd must be positive");
  if (!group_of_task.empty() && group_of_task.size() != K) {
    throw ConfigError("synth.group_of_task must have K entries");
  }
  if (group_of_task.empty() && n_groups < 1) throw ConfigError("synth.n_groups must be >= 1");
  const auto g = groups();
  const int n_distinct = *std::max_element(g.begin(), g.end()) + 1;
  if (*std::min_element(g.begin(), g.end()) < 0) {
    throw ConfigError("synth.group_of_task entries must be >= 0");
  }
  if (static_cast<std::size_t>(n_distinct) > d) {
    throw ConfigError("synth.d must be at least the number of groups");
  }
}

std::vector<int> SynthConfig::groups() const {
  if (!group_of_task.empty()) return group_of_task;
  std::vector<int> g(K);
  const int G = std::max(1, std::min<int>(n_groups, static_cast<int>(K)));
  for (std::size_t k = 0; k < K; ++k) g[k] = static_cast<int>(k * G / K);
  return g;
}

SynthResult synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<Eigen::Index>(cfg.n_rows);
  const auto d = static_cast<Eigen::Index>(cfg.d);
  const std::size_t K = cfg.K;
  const std::vector<int> group = cfg.groups();
  const int G = *std::max_element(group.begin(), group.end()) + 1;
  std::normal_distribution<double> normal(0.0, 1.0);

  SynthResult out;
  out.group_of_task = group;
  Dataset& ds = out.dataset;
  ds.features.resize(n, d);
  {
    std::mt19937_64 rng(derive_seed(cfg.seed, {0}));
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index j = 0; j < d; ++j) ds.features(r, j) = normal(rng);
    }
  }

  std::mt19937_64 wrng(derive_seed(cfg.seed, {1}));
  RowMatrix shared = RowMatrix::Zero(G, d);
  for (int g = 0; g < G; ++g) {
    const Eigen::Index lo = g * d / G;
    const Eigen::Index hi = (g + 1) * d / G;
    for (Eigen::Index j = lo; j < hi; ++j) shared(g, j) = normal(wrng);
    shared.row(g).normalize();
  }
  out.task_weights.resize(static_cast<Eigen::Index>(K), d);
  const double cos_t = std::cos(cfg.within_group_angle);
  const double sin_t = std::sin(cfg.within_group_angle);
  for (std::size_t k = 0; k < K; ++k) {
    const auto s = shared.row(group[k]);
    Eigen::RowVectorXd priv(d);
    for (Eigen::Index j = 0; j < d; ++j) priv[j] = normal(wrng);
    if (cfg.within_group_angle == 0.0) {
      out.task_weights.row(static_cast<Eigen::Index>(k)) = s;
      continue;
    }
    priv -= priv.dot(s) * s;
    priv.normalize();
    Eigen::RowVectorXd w = cos_t * s + sin_t * priv;
    out.task_weights.row(static_cast<Eigen::Index>(k)) = w / w.norm();
  }

  out.similarity.resize(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(K));
  for (std::size_t a = 0; a < K; ++a) {
    for (std::size_t b = 0; b < K; ++b) {
      const auto wa = out.task_weights.row(static_cast<Eigen::Index>(a));
      const auto wb = out.task_weights.row(static_cast<Eigen::Index>(b));
      const double c = wa.dot(wb) / std::sqrt(wa.squaredNorm() * wb.squaredNorm());
      out.similarity(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          std::clamp(c, -1.0, 1.0);
    }
  }

  ds.labels.assign(cfg.n_rows * K, 0);
  ds.present.assign(cfg.n_rows * K, 0);
  std::mt19937_64 lrng(derive_seed(cfg.seed, {2}));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const RowMatrix scores = ds.features * out.task_weights.transpose();
  for (std::size_t k = 0; k < K; ++k) {
    const double rate = cfg.label_rate.size() == 1 ? cfg.label_rate[0] : cfg.label_rate[k];
    const double base_logit = std::log(rate) - std::log1p(-rate);
    for (std::size_t r = 0; r < cfg.n_rows; ++r) {
      const double score = scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k));
      const bool y = unif(lrng) < sigmoid(score / cfg.noise_sd);
      const double p_present = rate >= 1.0 ? 1.0 : sigmoid(base_logit + cfg.mnar_strength * score);
      const bool present = unif(lrng) < p_present;
      ds.labels[r * K + k] = y;
      ds.present[r * K + k] = present;
    }
  }

  for (Eigen::Index j = 0; j < d; ++j) ds.feature_names.push_back(std::to_string(j));
  for (std::size_t k = 0; k < K; ++k) {
    ds.task_names.push_back("t" + std::to_string(k) + "_g" + std::to_string(group[k]));
  }
  try {
    ds.validate();
  } catch (const SchemaError& e) {
    throw ConfigError(std::string("synth.label_rate too low for n_rows: ") + e.what());
  }
  return out;
}

std::string similarity_to_csv(const RowMatrix& similarity, std::span<const std::string> names) {
  CsvTable table;
  table.header.push_back("task");
  for (const auto& n : names) table.header.push_back(n);
  for (Eigen::Index a = 0; a < similarity.rows(); ++a) {
    std::vector<std::string> row{names[static_cast<std::size_t>(a)]};
    for (Eigen::Index b = 0; b < similarity.cols(); ++b) row.push_back(format_double(similarity(a, b)));
    table.rows.push_back(std::move(row));
  }
  return to_csv(table);
}

FoldAssignment FoldAssignment::with_shift(int s) const {
  FoldAssignment out = *this;
  out.shift = ((s % n_folds) + n_folds) % n_folds;
  return out;
}

FoldAssignment assign_folds(const Dataset& ds, int n_folds, FoldGrouping grouping,
                            std::uint64_t seed) {
  if (n_folds < 2) throw ConfigError("n_folds must be >= 2");
  FoldAssignment fa;
  fa.n_folds = n_folds;
  fa.grouping = grouping;
  fa.fold_of_row.resize(ds.n_rows());
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> fold(0, n_folds - 1);
  if (grouping == FoldGrouping::kRow) {
    for (auto& f : fa.fold_of_row) f = fold(rng);
    return fa;
  }
  if (!ds.group_id) throw ConfigError("group-level folds need a group column");
  // Sorted group ids make the draw independent of row order.
  std::map<std::string, int> fold_of_group;
  for (const auto& g : *ds.group_id) fold_of_group.emplace(g, 0);
  for (auto& [g, f] : fold_of_group) f = fold(rng);
  for (std::size_t r = 0; r < ds.n_rows(); ++r) fa.fold_of_row[r] = fold_of_group.at((*ds.group_id)[r]);
  return fa;
}

std::string folds_to_csv(const Dataset& ds, const FoldAssignment& fa) {
  CsvTable table;
  table.header = {"row_index", "group_id", "fold"};
  for (std::size_t r = 0; r < fa.fold_of_row.size(); ++r) {
    table.rows.push_back({std::to_string(r), ds.group_id ? (*ds.group_id)[r] : std::string(),
                          std::to_string(fa.fold_of_row[r])});
  }
  return to_csv(table);
}

FoldAssignment parse_folds_csv(std::string_view text, const Dataset& ds) {
  const CsvTable table = parse_csv(text);
  const std::size_t ri = table.require_column("row_index");
  const std::size_t fi = table.require_column("fold");
  const std::size_t gi = table.require_column("group_id");
  if (table.rows.size() != ds.n_rows()) throw SchemaError("fold file row count does not match dataset");
  FoldAssignment fa;
  fa.fold_of_row.assign(ds.n_rows(), -1);
  bool grouped = false;
  int max_fold = 0;
  for (const auto& row : table.rows) {
    const auto r = static_cast<std::size_t>(parse_int(row[ri]));
    if (r >= ds.n_rows()) throw ParseError("row_index out of range: " + row[ri]);
    fa.fold_of_row[r] = static_cast<int>(parse_int(row[fi]));
    max_fold = std::max(max_fold, fa.fold_of_row[r]);
    grouped = grouped || !row[gi].empty();
  }
  if (std::any_of(fa.fold_of_row.begin(), fa.fold_of_row.end(), [](int f) { return f < 0; })) {
    throw ParseError("fold file misses rows or has negative folds");
  }
  fa.n_folds = max_fold + 1;
  fa.grouping = grouped ? FoldGrouping::kGroup : FoldGrouping::kRow;
  return fa;
}

std::size_t TrainingSelection::total() const noexcept {
  std::size_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

TrainingSelection training_subset(const Dataset& ds, const FoldAssignment& fa,
                                  std::span<const int> fold_counts,
                                  std::optional<std::size_t> extra_task) {
  const std::size_t K = ds.K();
  if (fold_counts.size() != K) throw ConfigError("fold_counts must have one entry per task");
  if (fa.fold_of_row.size() != ds.n_rows()) throw ConfigError("fold assignment does not match dataset");
  for (int m : fold_counts) {
    if (m < 0 || m > fa.n_folds - 1) {
      throw ConfigError("fold count " + std::to_string(m) + " leaves no test fold");
    }
  }
  if (extra_task) {
    if (*extra_task >= K) throw ConfigError("extra task out of range");
    if (fold_counts[*extra_task] + 1 > fa.n_folds - 1) {
      throw ConfigError("extra fold would overlap the test fold");
    }
  }

  // Position of each fold in the shifted order.
  std::vector<int> position(static_cast<std::size_t>(fa.n_folds));
  for (int p = 0; p < fa.n_folds; ++p) position[static_cast<std::size_t>(fa.fold_at(p))] = p;

  TrainingSelection sel;
  sel.n_tasks = K;
  sel.use.assign(ds.n_rows() * K, 0);
  sel.counts.assign(K, 0);
  if (extra_task) sel.extra_task = static_cast<int>(*extra_task);
  for (std::size_t r = 0; r < ds.n_rows(); ++r) {
    const int pos = position[static_cast<std::size_t>(fa.fold_of_row[r])];
    bool any = false;
    for (std::size_t k = 0; k < K; ++k) {
      if (!ds.is_present(r, k)) continue;
      bool in = pos < fold_counts[k];
      if (!in && extra_task && *extra_task == k && pos == fold_counts[k]) {
        in = true;
        ++sel.extra_count;
      }
      if (!in) continue;
      sel.use[r * K + k] = 1;
      ++sel.counts[k];
      any = true;
    }
    if (any) sel.rows.push_back(r);
  }
  return sel;
}

std::vector<std::size_t> test_rows(const FoldAssignment& fa) {
  std::vector<std::size_t> rows;
  const int test = fa.test_fold();
  for (std::size_t r = 0; r < fa.fold_of_row.size(); ++r) {
    if (fa.fold_of_row[r] == test) rows.push_back(r);
  }
  return rows;
}

}  // namespace mtlc
