#pragma once

#include <Eigen/Core>

#include "prunekit/forward.hpp"

namespace prunekit {

struct MetricsRecord {
  double auc = 0.5;
  double tpr_at_fpr = 0.0;
  double target_fpr = 0.001;
  double mean_loss = 0.0;
  double accuracy = 0.0;
  Index n = 0;
};

struct DamageReport;

struct Correlation {
  double value = 0.0;
  bool degenerate = false;  // one input had zero variance; value is reported as 0
};

// P(score_pos > score_neg) + 0.5 P(tie).
double roc_auc(const Eigen::VectorXd& scores, const Eigen::VectorXd& labels);

// Highest TPR over thresholds (predict positive iff score >= t) whose empirical
// FPR does not exceed target_fpr. No interpolation between ROC points.
double tpr_at_fpr(const Eigen::VectorXd& scores, const Eigen::VectorXd& labels, double target_fpr);

Correlation pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y);
// Pearson correlation of average ranks.
Correlation spearman(const Eigen::VectorXd& x, const Eigen::VectorXd& y);
// Average (1-based) ranks, ties share their mean rank.
Eigen::VectorXd average_ranks(const Eigen::VectorXd& x);

// Figure-style diagnostics over per-parameter mean(h*theta^2) and SD(h*theta^2).
struct VShapeStats {
  double corr_raw = 0.0;  // Pearson(mean, sd)
  double corr_abs = 0.0;  // Pearson(|mean|, sd)
  bool degenerate = false;
  Index n_params = 0;
  double fraction_nonneg_mean = 0.0;
};

VShapeStats v_shape_stats(const Eigen::VectorXd& mean, const Eigen::VectorXd& sd);
// Requires a report carrying mean_h_theta and sd_h_theta (obd / obd_sd).
VShapeStats v_shape_stats(const DamageReport& report);

MetricsRecord compute_metrics(const Eigen::VectorXd& scores, const Eigen::VectorXd& labels,
                              const Eigen::VectorXd& losses, double target_fpr = 0.001);

template <typename Scalar>
MetricsRecord evaluate(const Model<Scalar>& model, const Batch<Scalar>& data, double target_fpr = 0.001) {
  const VectorX<Scalar> scores = forward(model, data.features);
  const VectorX<Scalar> losses = sample_losses(model.loss, scores, data.labels);
  return compute_metrics(scores.template cast<double>(), data.labels.template cast<double>(),
                         losses.template cast<double>(), target_fpr);
}

}  // namespace prunekit
