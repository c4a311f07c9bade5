// SPDX-License-Identifier: Apache-2.0
#include "mtlc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "mtlc/error.hpp"

namespace mtlc {

namespace {

constexpr double kMinP = 1e-300;

struct Present {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  std::size_t n_pos = 0;
};

Present collect(const ScoredLabels& data) {
  if (data.scores.size() != data.labels.size() ||
      (!data.present.empty() && data.present.size() != data.scores.size())) {
    throw ShapeMismatch("scores, labels and present mask must have equal lengths");
  }
  Present out;
  for (std::size_t i = 0; i < data.scores.size(); ++i) {
    if (!data.present.empty() && !data.present[i]) continue;
    out.scores.push_back(data.scores[i]);
    out.labels.push_back(data.labels[i] ? 1 : 0);
    out.n_pos += data.labels[i] ? 1 : 0;
  }
  return out;
}

}  // namespace

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double auroc(const ScoredLabels& data) {
  const Present p = collect(data);
  const std::size_t n_neg = p.scores.size() - p.n_pos;
  if (p.n_pos == 0 || n_neg == 0) throw Undefined("AUROC needs both classes present");
  const std::vector<double> ranks = average_ranks(p.scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (p.labels[i]) rank_sum += ranks[i];
  }
  const double pos = static_cast<double>(p.n_pos);
  const double u = rank_sum - pos * (pos + 1.0) / 2.0;
  return u / (pos * static_cast<double>(n_neg));
}

double aupr(const ScoredLabels& data) {
  const Present p = collect(data);
  if (p.n_pos == 0) throw Undefined("AUPR needs at least one positive");
  std::vector<std::size_t> order(p.scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p.scores[a] > p.scores[b]; });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (!p.labels[order[rank]]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
  }
  return sum / static_cast<double>(p.n_pos);
}

CorrResult spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DomainError("spearman inputs differ in length");
  const std::size_t n = x.size();
  if (n < 3) throw DomainError("spearman needs n >= 3");

  std::vector<double> rx = average_ranks(x);
  std::vector<double> ry = average_ranks(y);
  const double mean = (static_cast<double>(n) + 1.0) / 2.0;
  for (auto& v : rx) v -= mean;
  for (auto& v : ry) v -= mean;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += rx[i] * rx[i];
    syy += ry[i] * ry[i];
    sxy += rx[i] * ry[i];
  }
  if (sxx == 0.0 || syy == 0.0) throw DegenerateInput("zero rank variance");
  const double denom = std::sqrt(sxx * syy);
  CorrResult out;
  out.n = n;
  out.r = std::clamp(sxy / denom, -1.0, 1.0);

  if (n <= kExactSpearmanMaxN) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    const double threshold = std::abs(out.r) - 1e-12;
    std::size_t extreme = 0, total = 0;
    do {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += rx[i] * ry[perm[i]];
      if (std::abs(s / denom) >= threshold) ++extreme;
      ++total;
    } while (std::next_permutation(perm.begin(), perm.end()));
    out.p = static_cast<double>(extreme) / static_cast<double>(total);
    return out;
  }

  const double df = static_cast<double>(n) - 2.0;
  if (std::abs(out.r) >= 1.0) {
    out.p = kMinP;
    return out;
  }
  const double t = out.r * std::sqrt(df / (1.0 - out.r * out.r));
  const boost::math::students_t dist(df);
  out.p = std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))), kMinP, 1.0);
  return out;
}

std::vector<TaskMetric> task_metrics(const RowMatrix& predictions, const Dataset& ds,
                                     std::span<const std::size_t> tasks,
                                     std::span<const std::size_t> rows) {
  if (static_cast<std::size_t>(predictions.rows()) != rows.size() ||
      static_cast<std::size_t>(predictions.cols()) != ds.K()) {
    throw ShapeMismatch("prediction matrix must be rows x K");
  }
  std::vector<std::size_t> all;
  if (tasks.empty()) {
    all.resize(ds.K());
    std::iota(all.begin(), all.end(), 0);
    tasks = all;
  }
  std::vector<TaskMetric> out;
  out.reserve(tasks.size());
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  for (std::size_t task : tasks) {
    if (task >= ds.K()) throw ShapeMismatch("task index out of range");
    scores.clear();
    labels.clear();
    TaskMetric m;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] >= ds.n_rows()) throw ShapeMismatch("row index out of range");
      if (!ds.is_present(rows[i], task)) continue;
      scores.push_back(predictions(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(task)));
      const std::uint8_t y = ds.label(rows[i], task);
      labels.push_back(y);
      (y ? m.n_pos : m.n_neg) += 1;
    }
    const ScoredLabels sl{scores, labels};
    if (m.n_pos > 0 && m.n_neg > 0) {
      m.auroc = auroc(sl);
      m.aupr = aupr(sl);
    } else if (m.n_pos > 0) {
      m.aupr = aupr(sl);
    }
    out.push_back(m);
  }
  return out;
}

}  // namespace mtlc
