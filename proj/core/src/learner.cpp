// SPDX-License-Identifier: Apache-2.0
#include "mtlc/learner.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <random>
#include <sstream>

#include "mtlc/csv.hpp"
#include "mtlc/error.hpp"
#include "mtlc/hash.hpp"

namespace mtlc {

namespace {

constexpr double kProbFloor = 1e-7;
constexpr std::string_view kCheckpointMagic = "# mtlc-checkpoint v1";

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Portable Fisher-Yates; std::shuffle's draw sequence is library-specific.
void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

struct Forward {
  RowMatrix a;  // B x r pre-activation
  RowMatrix h;  // B x r
  RowMatrix p;  // B x K
};

Forward forward(const ModelParams& m, const RowMatrix& x) {
  Forward f;
  f.a = x * m.w1.transpose();
  f.a.rowwise() += m.b1.transpose();
  f.h = f.a.cwiseMax(0.0);
  RowMatrix z = f.h * m.w2.transpose();
  z.rowwise() += m.b2.transpose();
  f.p = z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  return f;
}

double bce(double p, bool y) {
  const double pc = std::clamp(p, kProbFloor, 1.0 - kProbFloor);
  return y ? -std::log(pc) : -std::log1p(-pc);
}

// Loss sum_k weight[k] * sum over used labels of task k, with gradients.
// Gradients of the clamped loss vanish where the clamp is active.
double loss_and_grad(const ModelParams& m, const Batch& batch, std::span<const double> weight,
                     ModelParams* grad, bool trunk_only) {
  const Forward f = forward(m, batch.x);
  const auto B = static_cast<Eigen::Index>(batch.size());
  const auto K = static_cast<Eigen::Index>(batch.K);
  RowMatrix g = RowMatrix::Zero(B, K);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    for (Eigen::Index k = 0; k < K; ++k) {
      const auto ui = static_cast<std::size_t>(i), uk = static_cast<std::size_t>(k);
      if (weight[uk] == 0.0 || !batch.uses(ui, uk)) continue;
      const double p = f.p(i, k);
      const bool y = batch.y[ui * batch.K + uk] != 0;
      loss += weight[uk] * bce(p, y);
      if (p > kProbFloor && p < 1.0 - kProbFloor) g(i, k) = weight[uk] * (p - (y ? 1.0 : 0.0));
    }
  }
  if (grad) {
    if (!trunk_only) {
      grad->w2 = g.transpose() * f.h;
      grad->b2 = g.colwise().sum().transpose();
    }
    RowMatrix da = g * m.w2;
    da = (f.a.array() > 0.0).select(da, 0.0);
    grad->w1 = da.transpose() * batch.x;
    grad->b1 = da.colwise().sum().transpose();
  }
  return loss;
}

std::vector<double> task_weight(const Batch& batch, std::size_t task) {
  std::vector<double> w(batch.K, 0.0);
  const std::size_t n = batch.count(task);
  if (n > 0) w[task] = 1.0 / static_cast<double>(n);
  return w;
}

template <typename Visit>
void for_each_tensor(ModelParams& p, Visit&& visit) {
  visit("w1", p.w1.data(), p.w1.rows(), p.w1.cols());
  visit("b1", p.b1.data(), p.b1.rows(), Eigen::Index{1});
  visit("w2", p.w2.data(), p.w2.rows(), p.w2.cols());
  visit("b2", p.b2.data(), p.b2.rows(), Eigen::Index{1});
}

struct Adam {
  ModelParams m, v;
  double b1t = 1.0, b2t = 1.0;

  void step(ModelParams& theta, ModelParams& g, const ModelConfig& cfg) {
    b1t *= cfg.beta1;
    b2t *= cfg.beta2;
    const double c1 = 1.0 - b1t, c2 = 1.0 - b2t;
    auto update = [&](auto& th, auto& gr, auto& mm, auto& vv) {
      mm = cfg.beta1 * mm + (1.0 - cfg.beta1) * gr;
      vv = cfg.beta2 * vv + (1.0 - cfg.beta2) * gr.cwiseProduct(gr);
      th.array() -= cfg.learning_rate * (mm.array() / c1) / ((vv.array() / c2).sqrt() + cfg.epsilon);
    };
    update(theta.w1, g.w1, m.w1, v.w1);
    update(theta.b1, g.b1, m.b1, v.b1);
    update(theta.w2, g.w2, m.w2, v.w2);
    update(theta.b2, g.b2, m.b2, v.b2);
  }
};

}  // namespace

void ModelConfig::validate() const {
  if (d < 1) throw ConfigError("model.d must be >= 1");
  if (r < 1) throw ConfigError("model.r must be >= 1");
  if (K < 1) throw ConfigError("model.K must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("model.learning_rate must be positive");
  if (epochs < 0) throw ConfigError("model.epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("model.batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("model.beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("model.beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("model.epsilon must be positive");
}

std::string ModelConfig::hash() const {
  Fnv1a h;
  h.update("model").update(d).update(r).update(K).update(format_double(learning_rate));
  h.update(static_cast<std::uint64_t>(epochs)).update(batch_size);
  h.update(format_double(beta1)).update(format_double(beta2)).update(format_double(epsilon));
  h.update(seed);
  return h.hex();
}

ModelParams ModelParams::zeros(std::size_t d, std::size_t r, std::size_t K) {
  const auto di = static_cast<Eigen::Index>(d), ri = static_cast<Eigen::Index>(r),
             ki = static_cast<Eigen::Index>(K);
  return {RowMatrix::Zero(ri, di), Eigen::VectorXd::Zero(ri), RowMatrix::Zero(ki, ri),
          Eigen::VectorXd::Zero(ki)};
}

bool ModelParams::all_finite() const {
  return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite();
}

bool ModelParams::operator==(const ModelParams& o) const {
  auto same = [](const auto& a, const auto& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           (a.size() == 0 || std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0);
  };
  return same(w1, o.w1) && same(b1, o.b1) && same(w2, o.w2) && same(b2, o.b2);
}

std::size_t Batch::count(std::size_t task) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < size(); ++i) n += uses(i, task) ? 1 : 0;
  return n;
}

Batch make_batch(const Dataset& ds, const TrainingSelection& sel, std::span<const std::size_t> rows) {
  Batch b;
  b.K = ds.K();
  b.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ds.d()));
  b.y.assign(rows.size() * b.K, 0);
  b.use.assign(rows.size() * b.K, 0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    b.x.row(static_cast<Eigen::Index>(i)) = ds.features.row(static_cast<Eigen::Index>(r));
    for (std::size_t k = 0; k < b.K; ++k) {
      if (!sel.uses(r, k)) continue;
      b.use[i * b.K + k] = 1;
      b.y[i * b.K + k] = ds.label(r, k);
    }
  }
  return b;
}

ModelParams init_params(const ModelConfig& cfg) {
  ModelParams p = ModelParams::zeros(cfg.d, cfg.r, cfg.K);
  std::mt19937_64 rng(derive_seed(cfg.seed, {0}));
  auto fill = [&](RowMatrix& w, double fan_in) {
    const double bound = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = bound * (2.0 * uniform01(rng) - 1.0);
  };
  fill(p.w1, static_cast<double>(cfg.d));
  fill(p.w2, static_cast<double>(cfg.r));
  return p;
}

double batch_loss(const ModelParams& params, const Batch& batch) {
  const std::vector<double> w(batch.K, batch.size() ? 1.0 / static_cast<double>(batch.size()) : 0.0);
  return loss_and_grad(params, batch, w, nullptr, false);
}

ModelParams full_grad(const ModelParams& params, const Batch& batch) {
  const std::vector<double> w(batch.K, batch.size() ? 1.0 / static_cast<double>(batch.size()) : 0.0);
  ModelParams g;
  loss_and_grad(params, batch, w, &g, false);
  return g;
}

std::optional<double> task_loss(const ModelParams& params, const Batch& batch, std::size_t task) {
  if (task >= batch.K) throw ShapeMismatch("task index out of range");
  if (batch.count(task) == 0) return std::nullopt;
  return loss_and_grad(params, batch, task_weight(batch, task), nullptr, true);
}

std::vector<std::optional<double>> task_losses(const ModelParams& params, const Batch& batch) {
  const RowMatrix p = forward(params, batch.x).p;
  std::vector<std::optional<double>> out(batch.K);
  for (std::size_t k = 0; k < batch.K; ++k) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (!batch.uses(i, k)) continue;
      sum += bce(p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)), batch.y[i * batch.K + k] != 0);
      ++n;
    }
    if (n > 0) out[k] = sum / static_cast<double>(n);
  }
  return out;
}

TrunkGrad shared_grad(const ModelParams& params, const Batch& batch, std::size_t task) {
  if (task >= batch.K) throw ShapeMismatch("task index out of range");
  if (batch.count(task) == 0) throw NoLabels("batch has no labels for task " + std::to_string(task));
  ModelParams g;
  loss_and_grad(params, batch, task_weight(batch, task), &g, true);
  return {std::move(g.w1), std::move(g.b1)};
}

TrunkGrad shared_grad_sum(const ModelParams& params, const Batch& batch,
                          std::span<const std::uint8_t> include) {
  std::vector<double> w(batch.K, 0.0);
  for (std::size_t k = 0; k < batch.K; ++k) {
    if (!include[k]) continue;
    const std::size_t n = batch.count(k);
    if (n > 0) w[k] = 1.0 / static_cast<double>(n);
  }
  ModelParams g;
  loss_and_grad(params, batch, w, &g, true);
  return {std::move(g.w1), std::move(g.b1)};
}

TrainedModel train(const Dataset& ds, const TrainingSelection& sel, const ModelConfig& cfg,
                   const StepObserver& observer) {
  cfg.validate();
  if (cfg.d != ds.d() || cfg.K != ds.K()) throw ShapeMismatch("model config does not match dataset");
  if (sel.rows.empty() || sel.total() == 0) throw EmptySelection("training selection has no labels");

  TrainedModel model;
  model.config = cfg;
  model.params = init_params(cfg);
  model.manifest = {cfg.hash(), cfg.seed, sel.counts};

  Adam adam{ModelParams::zeros(cfg.d, cfg.r, cfg.K), ModelParams::zeros(cfg.d, cfg.r, cfg.K)};
  std::mt19937_64 rng(derive_seed(cfg.seed, {1}));
  std::vector<std::size_t> order = sel.rows;
  const std::size_t per_epoch = (order.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = per_epoch * static_cast<std::size_t>(cfg.epochs);
  std::size_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      const Batch batch = make_batch(ds, sel, std::span(order).subspan(start, len));
      ++step;
      if (observer) observer(StepContext{epoch, step, total_steps, model.params, batch});
      const std::vector<double> w(batch.K, 1.0 / static_cast<double>(len));
      ModelParams g;
      epoch_loss += loss_and_grad(model.params, batch, w, &g, false);
      adam.step(model.params, g, cfg);
    }
    if (!std::isfinite(epoch_loss) || !model.params.all_finite()) {
      throw NonFiniteLoss("training diverged in epoch " + std::to_string(epoch));
    }
  }
  return model;
}

RowMatrix predict(const ModelParams& params, const RowMatrix& x) {
  if (x.cols() != params.w1.cols()) {
    throw ShapeMismatch("feature width " + std::to_string(x.cols()) + " does not match d = " +
                        std::to_string(params.w1.cols()));
  }
  return forward(params, x).p;
}

RowMatrix predict(const TrainedModel& model, const RowMatrix& x) { return predict(model.params, x); }

std::string checkpoint_to_string(const TrainedModel& model) {
  const ModelConfig& c = model.config;
  std::ostringstream out;
  out << kCheckpointMagic << '\n';
  out << "# config_hash=" << model.manifest.config_hash << '\n';
  out << "# d=" << c.d << " r=" << c.r << " K=" << c.K << " learning_rate=" << format_double(c.learning_rate)
      << " epochs=" << c.epochs << " batch_size=" << c.batch_size << " beta1=" << format_double(c.beta1)
      << " beta2=" << format_double(c.beta2) << " epsilon=" << format_double(c.epsilon)
      << " seed=" << c.seed << '\n';
  out << "# n_i=";
  for (std::size_t k = 0; k < model.manifest.n_i.size(); ++k) {
    out << (k ? ";" : "") << model.manifest.n_i[k];
  }
  out << '\n';
  write_csv_row(out, {"tensor", "row", "col", "value"});
  ModelParams p = model.params;
  for_each_tensor(p, [&](const char* name, const double* data, Eigen::Index rows, Eigen::Index cols) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) {
        write_csv_row(out, {name, std::to_string(i), std::to_string(j), format_double(data[i * cols + j])});
      }
    }
  });
  return out.str();
}

TrainedModel checkpoint_from_string(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) throw ParseError("not an mtlc checkpoint");
  std::map<std::string, std::string> kv;
  std::string body;
  while (std::getline(in, line)) {
    if (line.rfind("# ", 0) == 0) {
      std::istringstream fields(line.substr(2));
      std::string f;
      while (fields >> f) {
        const auto eq = f.find('=');
        if (eq == std::string::npos) throw ParseError("malformed checkpoint header field '" + f + "'");
        kv[f.substr(0, eq)] = f.substr(eq + 1);
      }
      continue;
    }
    body += line;
    body += '\n';
  }
  auto get = [&](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw ParseError("checkpoint header lacks '" + key + "'");
    return it->second;
  };
  TrainedModel m;
  ModelConfig& c = m.config;
  c.d = static_cast<std::size_t>(parse_int(get("d")));
  c.r = static_cast<std::size_t>(parse_int(get("r")));
  c.K = static_cast<std::size_t>(parse_int(get("K")));
  c.learning_rate = parse_double(get("learning_rate"));
  c.epochs = static_cast<int>(parse_int(get("epochs")));
  c.batch_size = static_cast<std::size_t>(parse_int(get("batch_size")));
  c.beta1 = parse_double(get("beta1"));
  c.beta2 = parse_double(get("beta2"));
  c.epsilon = parse_double(get("epsilon"));
  c.seed = std::stoull(get("seed"));
  m.manifest.config_hash = get("config_hash");
  m.manifest.seed = c.seed;
  const std::string n_i = get("n_i");
  std::istringstream counts(n_i);
  for (std::string v; std::getline(counts, v, ';');) {
    if (!v.empty()) m.manifest.n_i.push_back(static_cast<std::size_t>(parse_int(v)));
  }
  if (m.manifest.config_hash != c.hash()) throw ParseError("checkpoint config hash mismatch");

  m.params = ModelParams::zeros(c.d, c.r, c.K);
  const CsvTable table = parse_csv(body);
  const std::size_t ti = table.require_column("tensor"), ri = table.require_column("row"),
                    ci = table.require_column("col"), vi = table.require_column("value");
  std::size_t filled = 0;
  for (const auto& row : table.rows) {
    bool hit = false;
    for_each_tensor(m.params, [&](const char* name, double* data, Eigen::Index rows, Eigen::Index cols) {
      if (row[ti] != name) return;
      const auto i = parse_int(row[ri]), j = parse_int(row[ci]);
      if (i < 0 || j < 0 || i >= rows || j >= cols) throw ParseError("checkpoint index out of range");
      data[i * cols + j] = parse_double(row[vi]);
      hit = true;
    });
    if (!hit) throw ParseError("unknown checkpoint tensor '" + row[ti] + "'");
    ++filled;
  }
  const std::size_t expected = c.r * c.d + c.r + c.K * c.r + c.K;
  if (filled != expected) throw ParseError("checkpoint has wrong number of parameters");
  return m;
}

void save_checkpoint(const std::filesystem::path& path, const TrainedModel& model) {
  write_file_atomic(path, checkpoint_to_string(model));
}

TrainedModel load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_string(read_file(path));
}

}  // namespace mtlc
