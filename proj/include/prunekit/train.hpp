#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "prunekit/forward.hpp"

namespace prunekit {

struct TrainConfig {
  int epochs = 1;
  Index batch_size = 128;
  double learning_rate = 0.01;
  std::uint64_t seed = 0;
  double batchnorm_momentum = 0.1;
};

struct TrainStats {
  std::vector<double> epoch_loss;  // mean train-mode minibatch loss per epoch
};

namespace detail {

// One SGD step on a minibatch in train mode. Returns the minibatch mean loss.
template <typename Scalar>
Scalar sgd_step(Model<Scalar>& model, const Batch<Scalar>& mb, Scalar lr, Scalar momentum, std::mt19937_64& rng) {
  const std::size_t n_layers = model.layers.size();
  const Index m = mb.size();
  const Scalar inv_m = Scalar(1) / static_cast<Scalar>(m);

  std::vector<MatrixX<Scalar>> xhat(n_layers), u(n_layers), a(n_layers), keep(n_layers);
  std::vector<VectorX<Scalar>> inv_std(n_layers);
  const MatrixX<Scalar>* prev = &mb.features;
  for (std::size_t l = 0; l < n_layers; ++l) {
    auto& layer = model.layers[l];
    MatrixX<Scalar> z = layer.weight * *prev;
    z.colwise() += layer.bias;
    if (layer.batchnorm) {
      auto& bn = *layer.batchnorm;
      const VectorX<Scalar> mean = z.rowwise().mean();
      z.colwise() -= mean;
      const VectorX<Scalar> var = z.array().square().rowwise().mean();
      inv_std[l] = (var.array() + Scalar(kBatchNormEpsilon)).rsqrt();
      xhat[l] = (z.array().colwise() * inv_std[l].array()).matrix();
      u[l] = ((xhat[l].array().colwise() * bn.gamma.array()).colwise() + bn.beta.array()).matrix();
      const Scalar unbias = m > 1 ? static_cast<Scalar>(m) / static_cast<Scalar>(m - 1) : Scalar(1);
      bn.running_mean = (Scalar(1) - momentum) * bn.running_mean + momentum * mean;
      bn.running_var = (Scalar(1) - momentum) * bn.running_var + momentum * unbias * var;
    } else {
      u[l] = std::move(z);
    }
    a[l] = activate(layer.activation, u[l].array()).matrix();
    if (l + 1 < n_layers && layer.dropout_rate > 0.0) {
      const Scalar keep_scale = Scalar(1) / Scalar(1 - layer.dropout_rate);
      std::bernoulli_distribution drop(layer.dropout_rate);
      keep[l].resize(a[l].rows(), a[l].cols());
      for (Index c = 0; c < keep[l].cols(); ++c)
        for (Index r = 0; r < keep[l].rows(); ++r) keep[l](r, c) = drop(rng) ? Scalar(0) : keep_scale;
      a[l].array() *= keep[l].array();
    }
    prev = &a[l];
  }

  const VectorX<Scalar> scores = a.back().row(0).transpose();
  const Scalar loss = sample_losses(model.loss, scores, mb.labels).mean();

  MatrixX<Scalar> delta(1, m);
  for (Index s = 0; s < m; ++s)
    delta(0, s) = output_derivatives(model.loss, u.back()(0, s), mb.labels(s)).d1 * inv_m;

  for (Index l = static_cast<Index>(n_layers) - 1; l >= 0; --l) {
    auto& layer = model.layers[l];
    const MatrixX<Scalar>& in = l == 0 ? mb.features : a[l - 1];
    MatrixX<Scalar> grad_w = delta * in.transpose();
    VectorX<Scalar> grad_b = delta.rowwise().sum();
    MatrixX<Scalar> below;
    if (l > 0) below = layer.weight.transpose() * delta;

    if (layer.mask) {
      grad_w.array() *= layer.mask->leftCols(layer.in_width()).template cast<Scalar>().array();
      grad_b.array() *= layer.mask->col(layer.in_width()).template cast<Scalar>().array();
    }
    layer.weight -= lr * grad_w;
    layer.bias -= lr * grad_b;
    layer.apply_mask();

    if (l == 0) break;
    auto& lower = model.layers[l - 1];
    if (keep[l - 1].size() > 0) below.array() *= keep[l - 1].array();
    MatrixX<Scalar> du = (below.array() * activate_d1(lower.activation, u[l - 1].array())).matrix();
    if (lower.batchnorm) {
      auto& bn = *lower.batchnorm;
      const VectorX<Scalar> grad_beta = du.rowwise().sum();
      const VectorX<Scalar> grad_gamma = (du.array() * xhat[l - 1].array()).rowwise().sum();
      MatrixX<Scalar> dx = (du.array().colwise() * bn.gamma.array()).matrix();
      const VectorX<Scalar> sum_dx = dx.rowwise().sum();
      const VectorX<Scalar> sum_dx_xhat = (dx.array() * xhat[l - 1].array()).rowwise().sum();
      const Scalar mf = static_cast<Scalar>(m);
      dx = (((dx.array() * mf).colwise() - sum_dx.array()) - xhat[l - 1].array().colwise() * sum_dx_xhat.array())
               .matrix();
      dx.array().colwise() *= inv_std[l - 1].array() / mf;
      bn.gamma -= lr * grad_gamma;
      bn.beta -= lr * grad_beta;
      delta = std::move(dx);
    } else {
      delta = std::move(du);
    }
  }
  return loss;
}

}  // namespace detail

// Minibatch SGD with a fixed learning rate. Train mode: batch-norm uses batch
// statistics (and updates running ones), dropout is active. Masked parameters
// receive no update and stay exactly zero.
template <typename Scalar>
Model<Scalar> train(Model<Scalar> model, const Batch<Scalar>& data, const TrainConfig& config,
                    TrainStats* stats = nullptr) {
  if (config.epochs <= 0) return model;
  if (data.size() < 1) throw SpecError("training set is empty");
  if (config.batch_size < 1) throw SpecError("batch_size must be >= 1");
  model.check_consistency();
  model.apply_masks();

  std::mt19937_64 rng(config.seed);
  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::vector<Index> cols;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    Index batches = 0;
    for (Index start = 0; start < data.size(); start += config.batch_size) {
      const Index count = std::min(config.batch_size, data.size() - start);
      cols.assign(order.begin() + start, order.begin() + start + count);
      const Scalar loss = detail::sgd_step(model, data.select(cols), static_cast<Scalar>(config.learning_rate),
                                           static_cast<Scalar>(config.batchnorm_momentum), rng);
      if (!std::isfinite(static_cast<double>(loss)))
        throw DivergenceError("training diverged (non-finite loss) in epoch " + std::to_string(epoch), epoch);
      epoch_loss += static_cast<double>(loss);
      ++batches;
    }
    if (stats) stats->epoch_loss.push_back(epoch_loss / static_cast<double>(batches));
  }
  return model;
}

}  // namespace prunekit
