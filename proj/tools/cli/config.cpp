// SPDX-License-Identifier: Apache-2.0
#include "config.hpp"

#include <set>

#include "mtlc/csv.hpp"
#include "mtlc/error.hpp"
#include "mtlc/hash.hpp"

namespace mtlc::cli {

namespace {

using nlohmann::json;

// Reads fields of one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError("config: '" + display() + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: '" + name(key) + "' has the wrong type");
    }
  }

  std::optional<Section> sub(const char* key) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) return std::nullopt;
    return Section(*it, name(key));
  }

  bool has(const char* key) const { return obj_.contains(key) && !obj_.at(key).is_null(); }
  const json& raw(const char* key) {
    seen_.insert(key);
    return obj_.at(key);
  }
  std::string name(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.count(key)) throw ConfigError("config: unknown key '" + name(key.c_str()) + "'");
    }
  }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

json model_json(const ModelConfig& c) {
  return {{"r", c.r},           {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
          {"epochs", c.epochs}, {"beta1", c.beta1},                 {"beta2", c.beta2},
          {"epsilon", c.epsilon}};
}

}  // namespace

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  json data{{"path", data_path.generic_string()}, {"group_column", group_column}};
  if (synth) {
    data["synth"] = {{"n_rows", synth->n_rows},
                     {"d", synth->d},
                     {"K", synth->K},
                     {"group_of_task", synth->groups()},
                     {"within_group_angle", synth->within_group_angle},
                     {"label_rate", synth->label_rate},
                     {"mnar_strength", synth->mnar_strength},
                     {"noise_sd", synth->noise_sd},
                     {"seed", synth->seed}};
  }
  j["data"] = data;
  j["split"] = {{"n_folds", n_folds}, {"grouping", grouping == FoldGrouping::kRow ? "row" : "group"}};
  j["grid"] = {{"m_max", m_max}, {"shifts", shifts}};
  j["model"] = {{"stl", model_json(stl)}, {"mtl", model_json(mtl)}};
  std::vector<std::string> fams;
  for (CurveFamily f : families) fams.emplace_back(family_name(f));
  j["fit"] = {{"restarts", fit.restarts},         {"perturb_sigma", fit.perturb_sigma},
              {"max_iter", fit.max_iter},         {"rel_sse_tol", fit.rel_sse_tol},
              {"step_tol", fit.step_tol},         {"families", fams}};
  j["tag"] = {{"lookahead_lr", tag.lookahead_lr ? json(*tag.lookahead_lr) : json(nullptr)},
              {"every", tag.every},
              {"fold_counts", tag_folds()}};
  if (tag.epochs) j["tag"]["epochs"] = *tag.epochs;
  j["forecast"] = {{"budgets", budgets}};
  return j;
}

std::string RunConfig::hash() const { return Fnv1a().update(to_json().dump()).hex(); }

std::string RunConfig::stage_hash(std::string_view stage) const {
  const json full = to_json();
  std::vector<std::string> keys = {"seed", "data", "split"};
  if (stage == "grid") keys.insert(keys.end(), {"grid", "model"});
  if (stage == "fit") keys.insert(keys.end(), {"grid", "model", "fit"});
  if (stage == "tag") keys.insert(keys.end(), {"grid", "model", "tag"});
  if (stage == "report" || stage == "forecast") keys = {"seed", "data", "split", "grid", "model", "fit", "tag", "forecast"};
  json part;
  for (const auto& k : keys) part[k] = full.at(k);
  return Fnv1a().update(stage).update(part.dump()).hex();
}

std::vector<int> RunConfig::tag_folds() const {
  if (!tag_fold_counts.empty()) return tag_fold_counts;
  std::vector<int> out;
  for (int m = 1; m <= m_max; ++m) out.push_back(m);
  return out;
}

RunConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
  RunConfig c;
  Section root(doc, "");
  root.get("seed", c.seed);
  int cap = 0;
  root.get("parallelism", cap);
  if (root.has("parallelism")) {
    if (cap < 1) throw ConfigError("config: 'parallelism' must be >= 1");
    c.parallelism_cap = cap;
  }

  if (auto data = root.sub("data")) {
    std::string path;
    data->get("path", path);
    if (!path.empty()) {
      c.data_path = std::filesystem::path(path);
      if (c.data_path.is_relative()) c.data_path = (base_dir / c.data_path).lexically_normal();
    }
    data->get("group_column", c.group_column);
    if (auto s = data->sub("synth")) {
      SynthConfig sc;
      sc.seed = c.seed;
      s->get("n_rows", sc.n_rows);
      s->get("d", sc.d);
      s->get("K", sc.K);
      s->get("group_of_task", sc.group_of_task);
      s->get("n_groups", sc.n_groups);
      s->get("within_group_angle", sc.within_group_angle);
      if (s->has("label_rate")) {
        const json& lr = s->raw("label_rate");
        if (lr.is_number()) {
          sc.label_rate = {lr.get<double>()};
        } else {
          s->get("label_rate", sc.label_rate);
        }
      } else {
        s->get("label_rate", sc.label_rate);
      }
      s->get("mnar_strength", sc.mnar_strength);
      s->get("noise_sd", sc.noise_sd);
      s->get("seed", sc.seed);
      s->finish();
      sc.validate();
      c.synth = sc;
    }
    data->finish();
  }

  if (auto split = root.sub("split")) {
    split->get("n_folds", c.n_folds);
    std::string grouping = "row";
    split->get("grouping", grouping);
    if (grouping == "row") {
      c.grouping = FoldGrouping::kRow;
    } else if (grouping == "group") {
      c.grouping = FoldGrouping::kGroup;
    } else {
      throw ConfigError("config: 'split.grouping' must be \"row\" or \"group\"");
    }
    split->finish();
  }
  if (c.n_folds < 2) throw ConfigError("config: 'split.n_folds' must be >= 2");

  c.stl.epochs = 40;
  c.mtl.epochs = 100;
  if (auto grid = root.sub("grid")) {
    grid->get("m_max", c.m_max);
    if (grid->has("shifts") && grid->has("n_shifts")) {
      throw ConfigError("config: give either 'grid.shifts' or 'grid.n_shifts'");
    }
    grid->get("shifts", c.shifts);
    int n_shifts = 0;
    grid->get("n_shifts", n_shifts);
    if (n_shifts > 0) {
      c.shifts.clear();
      for (int s = 0; s < n_shifts; ++s) c.shifts.push_back(s);
    }
    grid->finish();
  }
  if (c.m_max < 1 || c.m_max > c.n_folds - 1) {
    throw ConfigError("config: 'grid.m_max' must lie in [1, split.n_folds - 1]");
  }

  if (auto model = root.sub("model")) {
    auto shared = [&](ModelConfig& m) {
      model->get("r", m.r);
      model->get("learning_rate", m.learning_rate);
      model->get("batch_size", m.batch_size);
      model->get("beta1", m.beta1);
      model->get("beta2", m.beta2);
      model->get("epsilon", m.epsilon);
    };
    shared(c.stl);
    shared(c.mtl);
    model->get("epochs_stl", c.stl.epochs);
    model->get("epochs_mtl", c.mtl.epochs);
    model->finish();
  }
  for (ModelConfig* m : {&c.stl, &c.mtl}) {
    ModelConfig probe = *m;
    probe.d = probe.K = 1;
    probe.validate();
  }

  if (auto fit = root.sub("fit")) {
    fit->get("restarts", c.fit.restarts);
    fit->get("perturb_sigma", c.fit.perturb_sigma);
    fit->get("max_iter", c.fit.max_iter);
    fit->get("rel_sse_tol", c.fit.rel_sse_tol);
    fit->get("step_tol", c.fit.step_tol);
    std::vector<std::string> fams;
    fit->get("families", fams);
    if (fit->has("families")) {
      c.families.clear();
      for (const auto& f : fams) c.families.push_back(parse_family(f));
    }
    fit->finish();
  }
  if (c.fit.restarts < 0 || c.fit.max_iter < 1) {
    throw ConfigError("config: 'fit.restarts' must be >= 0 and 'fit.max_iter' >= 1");
  }

  if (auto tag = root.sub("tag")) {
    double lr = -1.0;
    tag->get("lookahead_lr", lr);
    if (tag->has("lookahead_lr")) {
      if (!(lr >= 0.0)) throw ConfigError("config: 'tag.lookahead_lr' must be >= 0");
      c.tag.lookahead_lr = lr;
    }
    tag->get("every", c.tag.every);
    if (tag->has("epochs")) {
      int e = 0;
      tag->get("epochs", e);
      if (e < 1) throw ConfigError("config: 'tag.epochs' must be >= 1");
      c.tag.epochs = e;
    }
    tag->get("fold_counts", c.tag_fold_counts);
    tag->finish();
  }
  if (c.tag.every < 1) throw ConfigError("config: 'tag.every' must be >= 1");
  for (int m : c.tag_folds()) {
    if (m < 1 || m > c.n_folds - 1) throw ConfigError("config: 'tag.fold_counts' entries must lie in [1, n_folds - 1]");
  }

  if (auto fc = root.sub("forecast")) {
    fc->get("budgets", c.budgets);
    fc->finish();
  }
  for (double b : c.budgets) {
    if (!(b >= 0.0)) throw ConfigError("config: 'forecast.budgets' entries must be >= 0");
  }
  root.finish();
  return c;
}

nlohmann::json read_config_document(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingInput("config file not found: " + path.string());
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  return doc;
}

RunConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_config_document(path), path.parent_path());
}

}  // namespace mtlc::cli
