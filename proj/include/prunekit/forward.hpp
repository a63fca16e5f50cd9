#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "prunekit/model.hpp"

namespace prunekit {

// Samples are stored column-wise: features is input_dim x n.
template <typename Scalar>
struct Batch {
  MatrixX<Scalar> features;
  VectorX<Scalar> labels;

  Index size() const { return features.cols(); }

  template <typename T>
  Batch<T> cast() const {
    return {features.template cast<T>(), labels.template cast<T>()};
  }

  Batch select(const std::vector<Index>& columns) const {
    Batch out{MatrixX<Scalar>(features.rows(), static_cast<Index>(columns.size())),
              VectorX<Scalar>(static_cast<Index>(columns.size()))};
    for (std::size_t i = 0; i < columns.size(); ++i) {
      out.features.col(static_cast<Index>(i)) = features.col(columns[i]);
      out.labels(static_cast<Index>(i)) = labels(columns[i]);
    }
    return out;
  }

  Batch middle(Index start, Index count) const {
    return {features.middleCols(start, count), labels.segment(start, count)};
  }
};

enum class Mode { train, eval };

// BCE scores are clamped to [kScoreClamp, 1 - kScoreClamp] before the log.
inline constexpr double kScoreClamp = 1e-7;

namespace detail {

template <typename Derived>
auto activate(Activation act, const Eigen::ArrayBase<Derived>& u) {
  using Scalar = typename Derived::Scalar;
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  switch (act) {
    case Activation::elu: return Array((u > Scalar(0)).select(u, u.expm1()));
    case Activation::relu: return Array(u.max(Scalar(0)));
    case Activation::identity: return Array(u);
    case Activation::sigmoid: return Array((Scalar(1) + (-u).exp()).inverse());
  }
  return Array(u);
}

// First derivative of the activation with respect to its input.
template <typename Derived>
auto activate_d1(Activation act, const Eigen::ArrayBase<Derived>& u) {
  using Scalar = typename Derived::Scalar;
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  switch (act) {
    case Activation::elu: return Array((u > Scalar(0)).select(Array::Ones(u.rows(), u.cols()), u.exp()));
    case Activation::relu:
      return Array((u > Scalar(0)).select(Array::Ones(u.rows(), u.cols()), Array::Zero(u.rows(), u.cols())));
    case Activation::identity: return Array(Array::Ones(u.rows(), u.cols()));
    case Activation::sigmoid: {
      Array s = (Scalar(1) + (-u).exp()).inverse();
      return Array(s * (Scalar(1) - s));
    }
  }
  return Array(u);
}

// Second derivative. ELU uses the left limit e^0 = 1 at u == 0; RELU is 0 everywhere.
template <typename Derived>
auto activate_d2(Activation act, const Eigen::ArrayBase<Derived>& u) {
  using Scalar = typename Derived::Scalar;
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  switch (act) {
    case Activation::elu: return Array((u > Scalar(0)).select(Array::Zero(u.rows(), u.cols()), u.exp()));
    case Activation::relu:
    case Activation::identity: return Array(Array::Zero(u.rows(), u.cols()));
    case Activation::sigmoid: {
      Array s = (Scalar(1) + (-u).exp()).inverse();
      return Array(s * (Scalar(1) - s) * (Scalar(1) - Scalar(2) * s));
    }
  }
  return Array(u);
}

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  if (z >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-z));
  const Scalar e = std::exp(z);
  return e / (Scalar(1) + e);
}

}  // namespace detail

// Per-layer intermediate values of an eval-mode pass. For hidden layers
// u = bn(z) (or z without batch-norm) and a = act(u); the output layer has u = z.
template <typename Scalar>
struct ForwardTrace {
  MatrixX<Scalar> input;
  std::vector<MatrixX<Scalar>> z, u, a;
};

// Per hidden layer, 1 keeps a neuron and 0 zeroes its output (no rescaling).
template <typename Scalar>
using NeuronKeepMask = std::vector<VectorX<Scalar>>;

template <typename Scalar>
ForwardTrace<Scalar> forward_trace(const Model<Scalar>& model, const MatrixX<Scalar>& features,
                                   const NeuronKeepMask<Scalar>* keep = nullptr) {
  if (features.rows() != model.input_dim)
    throw DimensionError("feature width " + std::to_string(features.rows()) + " != input_dim " +
                         std::to_string(model.input_dim));
  ForwardTrace<Scalar> t;
  t.input = features;
  const std::size_t n_layers = model.layers.size();
  t.z.resize(n_layers);
  t.u.resize(n_layers);
  t.a.resize(n_layers);
  const MatrixX<Scalar>* prev = &t.input;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& layer = model.layers[l];
    t.z[l].noalias() = layer.weight * *prev;
    t.z[l].colwise() += layer.bias;
    if (layer.batchnorm) {
      const VectorX<Scalar> scale = layer.batchnorm->scale();
      const VectorX<Scalar> shift = layer.batchnorm->shift();
      t.u[l] = ((t.z[l].array().colwise() * scale.array()).colwise() + shift.array()).matrix();
    } else {
      t.u[l] = t.z[l];
    }
    t.a[l] = detail::activate(layer.activation, t.u[l].array()).matrix();
    if (keep && l + 1 < n_layers) t.a[l].array().colwise() *= (*keep)[l].array();
    prev = &t.a[l];
  }
  return t;
}

// Eval-mode scores: batch-norm uses running statistics, dropout is off.
template <typename Scalar>
VectorX<Scalar> forward(const Model<Scalar>& model, const MatrixX<Scalar>& features,
                        const NeuronKeepMask<Scalar>* keep = nullptr) {
  ForwardTrace<Scalar> t = forward_trace(model, features, keep);
  VectorX<Scalar> scores = t.a.back().row(0).transpose();
  if (!scores.allFinite()) throw NumericalError("non-finite activation in forward pass");
  return scores;
}

// Output logit (pre-activation) per sample.
template <typename Scalar>
VectorX<Scalar> forward_logits(const Model<Scalar>& model, const MatrixX<Scalar>& features) {
  ForwardTrace<Scalar> t = forward_trace(model, features);
  return t.z.back().row(0).transpose();
}

// Per-sample losses from output scores.
template <typename Scalar>
VectorX<Scalar> sample_losses(LossKind kind, const VectorX<Scalar>& scores, const VectorX<Scalar>& labels) {
  if (scores.size() != labels.size()) throw DimensionError("scores and labels differ in length");
  VectorX<Scalar> out(scores.size());
  for (Index i = 0; i < scores.size(); ++i) {
    const Scalar y = labels(i);
    if (kind == LossKind::squared_error) {
      const Scalar d = scores(i) - y;
      out(i) = d * d;
    } else {
      const Scalar lo = Scalar(kScoreClamp), hi = Scalar(1) - Scalar(kScoreClamp);
      const Scalar p = std::clamp(scores(i), lo, hi);
      out(i) = -(y * std::log(p) + (Scalar(1) - y) * std::log1p(-p));
    }
  }
  return out;
}

template <typename Scalar>
VectorX<Scalar> sample_losses(const Model<Scalar>& model, const Batch<Scalar>& batch,
                              const NeuronKeepMask<Scalar>* keep = nullptr) {
  return sample_losses(model.loss, forward(model, batch.features, keep), batch.labels);
}

template <typename Scalar>
Scalar mean_loss(const Model<Scalar>& model, const Batch<Scalar>& batch,
                 const NeuronKeepMask<Scalar>* keep = nullptr) {
  return sample_losses(model, batch, keep).mean();
}

namespace detail {

// Loss and its first two derivatives with respect to the output pre-activation.
template <typename Scalar>
struct OutputDerivatives {
  Scalar d1, d2;
};

template <typename Scalar>
OutputDerivatives<Scalar> output_derivatives(LossKind kind, Scalar z, Scalar y) {
  if (kind == LossKind::squared_error) return {Scalar(2) * (z - y), Scalar(2)};
  const Scalar p = sigmoid(z);
  // Inside the clamp region the loss is constant.
  if (p < Scalar(kScoreClamp) || p > Scalar(1) - Scalar(kScoreClamp)) return {Scalar(0), Scalar(0)};
  return {p - y, p * (Scalar(1) - p)};
}

}  // namespace detail

}  // namespace prunekit
