#pragma once

#include <algorithm>
#include <cstdint>
#include <iosfwd>
#include <numeric>
#include <random>
#include <string_view>
#include <vector>

#include "prunekit/derivatives.hpp"

namespace prunekit {

enum class DamageMethod { random, magnitude, obd, obd_sd, lm };

std::string_view to_string(DamageMethod m);
DamageMethod parse_damage_method(std::string_view name);

// Per-parameter damage over the prunable (hidden-layer) parameters, in
// ParamLayout::prunable order. Lower damage is pruned first.
struct DamageReport {
  DamageMethod method = DamageMethod::magnitude;
  ParamLayout layout;
  Eigen::VectorXd damage;
  // mean and SD over samples of h * theta^2 (no 1/2 factor); obd and obd_sd only.
  Eigen::VectorXd mean_h_theta;
  Eigen::VectorXd sd_h_theta;
  Index sample_count = 0;
  std::uint64_t seed = 0;

  Index size() const { return damage.size(); }
};

struct NeuronDamageReport {
  enum class Source { parameter_aggregation, dropout_regression };
  Source source = Source::parameter_aggregation;
  // One vector per hidden layer, one entry per neuron.
  std::vector<Eigen::VectorXd> layers;

  Index neuron_count() const {
    Index n = 0;
    for (const auto& l : layers) n += l.size();
    return n;
  }
};

struct DamageOptions {
  int threads = 1;
  // LM surrogate 2 (dL/dtheta)^2 in place of the curvature; false drops the theta^2 factor.
  bool lm_include_theta = true;
};

// CSV: layer,row,col,damage,mean,sd. The bias of a neuron has col == in_width.
void write_damage_csv(std::ostream& out, const DamageReport& report);
// CSV: layer,neuron,damage
void write_neuron_damage_csv(std::ostream& out, const NeuronDamageReport& report);

namespace detail {

template <typename Scalar>
Eigen::VectorXd prunable_theta(const Model<Scalar>& model) {
  const Index n = model.prunable_parameter_count();
  return flat_parameters(model).head(n).template cast<double>();
}

template <typename Scalar>
void require_prunable(const Model<Scalar>& model) {
  if (model.prunable_parameter_count() < 1) throw SpecError("model has no prunable parameters");
}

}  // namespace detail

// Seeded random permutation ranks, drawn independently per layer.
template <typename Scalar>
DamageReport damage_random(const Model<Scalar>& model, std::uint64_t seed) {
  detail::require_prunable(model);
  DamageReport r;
  r.method = DamageMethod::random;
  r.layout = ParamLayout::prunable(model);
  r.seed = seed;
  r.damage.resize(r.layout.size());
  std::mt19937_64 rng(seed);
  for (Index l = 0; l < r.layout.layer_count(); ++l) {
    std::vector<double> ranks(static_cast<std::size_t>(r.layout.layer_size(l)));
    std::iota(ranks.begin(), ranks.end(), 0.0);
    std::shuffle(ranks.begin(), ranks.end(), rng);
    r.damage.segment(r.layout.offset(l), r.layout.layer_size(l)) =
        Eigen::Map<const Eigen::VectorXd>(ranks.data(), static_cast<Index>(ranks.size()));
  }
  return r;
}

// |theta|.
template <typename Scalar>
DamageReport damage_magnitude(const Model<Scalar>& model) {
  detail::require_prunable(model);
  DamageReport r;
  r.method = DamageMethod::magnitude;
  r.layout = ParamLayout::prunable(model);
  r.damage = detail::prunable_theta(model).cwiseAbs();
  return r;
}

// Damage reports computed from precomputed derivative moments, so one
// derivative pass can feed several estimators.
template <typename Scalar>
DamageReport damage_from_moments(const Model<Scalar>& model, const DerivativeMoments& moments,
                                 DamageMethod method, const DamageOptions& options = {}) {
  detail::require_prunable(model);
  DamageReport r;
  r.method = method;
  r.layout = ParamLayout::prunable(model);
  r.sample_count = moments.sample_count;
  const Index n = r.layout.size();
  const Eigen::ArrayXd theta_sq = detail::prunable_theta(model).array().square();
  switch (method) {
    case DamageMethod::obd:
    case DamageMethod::obd_sd: {
      if (moments.hess_mean.size() == 0) throw SpecError("second-order moments required");
      if (method == DamageMethod::obd_sd && moments.sample_count < 2)
        throw SpecError("obd_sd needs a batch of at least 2 samples");
      const Eigen::ArrayXd h_mean = moments.hess_mean.head(n).array();
      const Eigen::ArrayXd h_sd = moments.hess_var.head(n).array().sqrt();
      r.mean_h_theta = (theta_sq * h_mean).matrix();
      r.sd_h_theta = (theta_sq * h_sd).matrix();
      r.damage = method == DamageMethod::obd ? Eigen::VectorXd(0.5 * r.mean_h_theta) : r.sd_h_theta;
      break;
    }
    case DamageMethod::lm: {
      const Eigen::ArrayXd surrogate = 2.0 * moments.grad_sq_mean.head(n).array();
      r.damage = options.lm_include_theta ? Eigen::VectorXd((surrogate * theta_sq).matrix())
                                          : Eigen::VectorXd(surrogate.matrix());
      break;
    }
    default: throw SpecError("method does not use derivative moments");
  }
  return r;
}

// mean_s(1/2 h_s theta^2). May be negative.
template <typename Scalar>
DamageReport damage_obd(const Model<Scalar>& model, const Batch<Scalar>& batch, const DamageOptions& options = {}) {
  return damage_from_moments(model, derivative_moments(model, batch, true, options.threads), DamageMethod::obd,
                             options);
}

// theta^2 * SD_s(h_s), sample SD with the n-1 denominator.
template <typename Scalar>
DamageReport damage_obd_sd(const Model<Scalar>& model, const Batch<Scalar>& batch,
                           const DamageOptions& options = {}) {
  if (batch.size() < 2) throw SpecError("obd_sd needs a batch of at least 2 samples");
  return damage_from_moments(model, derivative_moments(model, batch, true, options.threads), DamageMethod::obd_sd,
                             options);
}

// mean_s(2 (dL_s/dtheta)^2 theta^2). Never negative.
template <typename Scalar>
DamageReport damage_lm(const Model<Scalar>& model, const Batch<Scalar>& batch, const DamageOptions& options = {}) {
  return damage_from_moments(model, derivative_moments(model, batch, false, options.threads), DamageMethod::lm,
                             options);
}

template <typename Scalar>
DamageReport compute_damage(DamageMethod method, const Model<Scalar>& model, const Batch<Scalar>& batch,
                            std::uint64_t seed, const DamageOptions& options = {}) {
  switch (method) {
    case DamageMethod::random: return damage_random(model, seed);
    case DamageMethod::magnitude: return damage_magnitude(model);
    case DamageMethod::obd: return damage_obd(model, batch, options);
    case DamageMethod::obd_sd: return damage_obd_sd(model, batch, options);
    case DamageMethod::lm: return damage_lm(model, batch, options);
  }
  throw SpecError("unknown damage method");
}

// Neuron damage = sum of the damages of its incoming weights and bias, plus
// (optionally) its outgoing weights when the next layer is prunable.
template <typename Scalar>
NeuronDamageReport aggregate_to_neurons(const DamageReport& report, const Model<Scalar>& model,
                                        bool include_outgoing = false) {
  if (!(report.layout == ParamLayout::prunable(model))) throw DimensionError("damage report does not match model");
  NeuronDamageReport out;
  out.source = NeuronDamageReport::Source::parameter_aggregation;
  const auto& layout = report.layout;
  for (Index l = 0; l < layout.layer_count(); ++l) {
    Eigen::Map<const RowMajorMatrixX<double>> block(report.damage.data() + layout.offset(l), layout.rows(l),
                                                    layout.cols(l));
    Eigen::VectorXd d = block.rowwise().sum();
    if (include_outgoing && l + 1 < layout.layer_count()) {
      Eigen::Map<const RowMajorMatrixX<double>> next(report.damage.data() + layout.offset(l + 1),
                                                     layout.rows(l + 1), layout.cols(l + 1));
      d += next.leftCols(layout.rows(l)).colwise().sum().transpose();
    }
    out.layers.push_back(std::move(d));
  }
  return out;
}

struct DropoutRegressionConfig {
  Index rounds = 0;  // 0 selects 5 x neuron count
  double dropout_rate = 0.2;
  double ridge_lambda = 1e-6;
  std::uint64_t seed = 0;
  // Hidden layers whose neurons are scored; empty scores all hidden layers.
  std::vector<Index> layers;
  // Enumerate every drop pattern (2^k rounds) instead of sampling.
  bool exhaustive = false;
};

// Least squares fit of loss ~ b0 + sum_j b_j dropped_j with a ridge penalty on
// b_1..b_k. Returns (b0, b_1..b_k). Throws when ridge_lambda == 0 and the
// design is rank deficient.
Eigen::VectorXd fit_drop_regression(const Eigen::MatrixXd& dropped, const Eigen::VectorXd& losses,
                                    double ridge_lambda);

// Per-neuron damage from a regression of batch loss on random drop patterns.
// Dropped neurons output 0 (no rescaling), batch-norm uses running statistics.
template <typename Scalar>
NeuronDamageReport damage_dropout_regression(const Model<Scalar>& model, const Batch<Scalar>& batch,
                                             const DropoutRegressionConfig& config) {
  if (!(config.dropout_rate > 0.0 && config.dropout_rate < 1.0)) throw SpecError("dropout_rate must be in (0, 1)");
  if (config.ridge_lambda < 0.0) throw SpecError("ridge_lambda must be >= 0");
  if (batch.size() < 1) throw DimensionError("batch is empty");
  std::vector<Index> scored = config.layers;
  if (scored.empty())
    for (Index l = 0; l < model.hidden_count(); ++l) scored.push_back(l);
  struct Slot {
    Index layer, neuron;
  };
  std::vector<Slot> slots;
  for (Index l : scored) {
    if (l < 0 || l >= model.hidden_count()) throw SpecError("scored layer is not a hidden layer");
    for (Index i = 0; i < model.layers[l].out_width(); ++i) slots.push_back({l, i});
  }
  const Index k = static_cast<Index>(slots.size());
  Index rounds = config.rounds > 0 ? config.rounds : 5 * k;
  if (config.exhaustive) {
    if (k > 20) throw SpecError("exhaustive drop design limited to 20 neurons");
    rounds = Index{1} << k;
  }
  if (rounds < k + 1) throw SpecError("dropout regression needs rounds >= scored neurons + 1");

  Eigen::MatrixXd design(rounds, k);
  std::mt19937_64 rng(config.seed);
  std::bernoulli_distribution drop(config.dropout_rate);
  for (Index r = 0; r < rounds; ++r)
    for (Index j = 0; j < k; ++j)
      design(r, j) = config.exhaustive ? static_cast<double>((r >> j) & 1) : (drop(rng) ? 1.0 : 0.0);

  Eigen::VectorXd losses(rounds);
  NeuronKeepMask<Scalar> keep;
  for (Index l = 0; l < model.hidden_count(); ++l) keep.push_back(VectorX<Scalar>::Ones(model.layers[l].out_width()));
  for (Index r = 0; r < rounds; ++r) {
    for (auto& v : keep) v.setOnes();
    for (Index j = 0; j < k; ++j)
      if (design(r, j) != 0.0) keep[slots[j].layer](slots[j].neuron) = Scalar(0);
    losses(r) = static_cast<double>(mean_loss(model, batch, &keep));
  }

  const Eigen::VectorXd beta = fit_drop_regression(design, losses, config.ridge_lambda);
  NeuronDamageReport out;
  out.source = NeuronDamageReport::Source::dropout_regression;
  for (Index l = 0; l < model.hidden_count(); ++l) out.layers.push_back(Eigen::VectorXd::Zero(model.layers[l].out_width()));
  for (Index j = 0; j < k; ++j) out.layers[slots[j].layer](slots[j].neuron) = beta(j + 1);
  return out;
}

}  // namespace prunekit
