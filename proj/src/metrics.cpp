#include "prunekit/metrics.hpp"

#include "prunekit/damage.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace prunekit {
namespace {

struct ClassCounts {
  Index pos = 0, neg = 0;
};

ClassCounts count_classes(const Eigen::VectorXd& scores, const Eigen::VectorXd& labels) {
  if (scores.size() != labels.size()) throw DimensionError("scores and labels differ in length");
  ClassCounts c;
  for (Index i = 0; i < labels.size(); ++i) {
    if (labels(i) == 1.0) ++c.pos;
    else if (labels(i) == 0.0) ++c.neg;
    else throw SpecError("labels must be 0 or 1");
  }
  if (c.pos == 0 || c.neg == 0) throw SpecError("both classes must be present");
  return c;
}

// Indices sorted by descending score.
std::vector<Index> descending_order(const Eigen::VectorXd& scores) {
  std::vector<Index> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return scores(a) > scores(b); });
  return order;
}

}  // namespace

double roc_auc(const Eigen::VectorXd& scores, const Eigen::VectorXd& labels) {
  const ClassCounts c = count_classes(scores, labels);
  const auto order = descending_order(scores);
  // Sweep tie groups; each group adds a trapezoid to the ROC area.
  double area = 0.0, tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    double group_tp = 0.0, group_fp = 0.0;
    std::size_t j = i;
    for (; j < order.size() && scores(order[j]) == scores(order[i]); ++j) {
      if (labels(order[j]) == 1.0) group_tp += 1.0;
      else group_fp += 1.0;
    }
    area += group_fp * (tp + 0.5 * group_tp);
    tp += group_tp;
    fp += group_fp;
    i = j;
  }
  return area / (static_cast<double>(c.pos) * static_cast<double>(c.neg));
}

double tpr_at_fpr(const Eigen::VectorXd& scores, const Eigen::VectorXd& labels, double target_fpr) {
  if (!(target_fpr > 0.0 && target_fpr < 1.0)) throw SpecError("target_fpr must be in (0, 1)");
  const ClassCounts c = count_classes(scores, labels);
  const auto order = descending_order(scores);
  const auto allowed_fp = static_cast<Index>(std::floor(target_fpr * static_cast<double>(c.neg) + 1e-9));
  Index tp = 0, fp = 0, best_tp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    Index group_tp = 0, group_fp = 0;
    for (; j < order.size() && scores(order[j]) == scores(order[i]); ++j) {
      if (labels(order[j]) == 1.0) ++group_tp;
      else ++group_fp;
    }
    if (fp + group_fp > allowed_fp) break;
    tp += group_tp;
    fp += group_fp;
    best_tp = tp;
    i = j;
  }
  return static_cast<double>(best_tp) / static_cast<double>(c.pos);
}

Correlation pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size()) throw DimensionError("pearson: length mismatch");
  if (x.size() < 3) throw SpecError("pearson: need at least 3 values");
  const Eigen::ArrayXd dx = x.array() - x.mean();
  const Eigen::ArrayXd dy = y.array() - y.mean();
  const double sxx = dx.square().sum(), syy = dy.square().sum();
  if (sxx == 0.0 || syy == 0.0) return {0.0, true};
  const double r = (dx * dy).sum() / std::sqrt(sxx * syy);
  return {std::clamp(r, -1.0, 1.0), false};
}

Eigen::VectorXd average_ranks(const Eigen::VectorXd& x) {
  std::vector<Index> order(static_cast<std::size_t>(x.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return x(a) < x(b); });
  Eigen::VectorXd ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && x(order[j]) == x(order[i])) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks(order[k]) = avg;
    i = j;
  }
  return ranks;
}

Correlation spearman(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size()) throw DimensionError("spearman: length mismatch");
  return pearson(average_ranks(x), average_ranks(y));
}

VShapeStats v_shape_stats(const Eigen::VectorXd& mean, const Eigen::VectorXd& sd) {
  if (mean.size() != sd.size()) throw DimensionError("v_shape_stats: length mismatch");
  if (mean.size() < 3) throw SpecError("v_shape_stats: need at least 3 parameters");
  VShapeStats s;
  s.n_params = mean.size();
  const Correlation raw = pearson(mean, sd);
  const Correlation abs = pearson(mean.cwiseAbs(), sd);
  s.corr_raw = raw.value;
  s.corr_abs = abs.value;
  s.degenerate = raw.degenerate || abs.degenerate;
  s.fraction_nonneg_mean = static_cast<double>((mean.array() >= 0.0).count()) / static_cast<double>(mean.size());
  return s;
}

VShapeStats v_shape_stats(const DamageReport& report) {
  if (report.mean_h_theta.size() == 0 || report.sd_h_theta.size() == 0)
    throw SpecError("damage report carries no mean/sd statistics");
  return v_shape_stats(report.mean_h_theta, report.sd_h_theta);
}

MetricsRecord compute_metrics(const Eigen::VectorXd& scores, const Eigen::VectorXd& labels,
                              const Eigen::VectorXd& losses, double target_fpr) {
  MetricsRecord r;
  r.n = scores.size();
  if (r.n < 1) throw SpecError("cannot compute metrics on an empty set");
  r.target_fpr = target_fpr;
  r.auc = roc_auc(scores, labels);
  r.tpr_at_fpr = tpr_at_fpr(scores, labels, target_fpr);
  r.mean_loss = losses.mean();
  Index correct = 0;
  for (Index i = 0; i < r.n; ++i) correct += ((scores(i) >= 0.5) == (labels(i) == 1.0)) ? 1 : 0;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n);
  return r;
}

}  // namespace prunekit
