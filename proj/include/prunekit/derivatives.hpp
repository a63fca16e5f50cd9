#pragma once

#include <string>
#include <vector>

#include "prunekit/forward.hpp"
#include "prunekit/parallel.hpp"

namespace prunekit {

// Per-sample first derivatives and diagonal second derivatives of the loss,
// one column per sample, rows in ParamLayout::all order. `hessian_diag` is
// empty when only first derivatives were requested.
template <typename Scalar>
struct PerSampleDerivatives {
  ParamLayout layout;
  MatrixX<Scalar> gradient;
  MatrixX<Scalar> hessian_diag;
  Index sample_count = 0;
};

// Running per-parameter moments over samples, accumulated in double.
class MomentAccumulator {
 public:
  MomentAccumulator() = default;
  explicit MomentAccumulator(Index size) : mean_(Eigen::VectorXd::Zero(size)), m2_(Eigen::VectorXd::Zero(size)) {}

  template <typename Derived>
  void push(const Eigen::MatrixBase<Derived>& x) {
    ++count_;
    const Eigen::VectorXd value = x.template cast<double>();
    const Eigen::VectorXd delta = value - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_.array() += delta.array() * (value - mean_).array();
  }

  // Chan et al. pairwise combination.
  void merge(const MomentAccumulator& other) {
    if (other.count_ == 0) return;
    if (count_ == 0) {
      *this = other;
      return;
    }
    const double na = static_cast<double>(count_), nb = static_cast<double>(other.count_);
    const double n = na + nb;
    const Eigen::VectorXd delta = other.mean_ - mean_;
    mean_ += delta * (nb / n);
    m2_ += other.m2_ + (delta.array().square() * (na * nb / n)).matrix();
    count_ += other.count_;
  }

  Index count() const { return count_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  // Sample variance with the n-1 denominator.
  Eigen::VectorXd variance() const {
    if (count_ < 2) return Eigen::VectorXd::Zero(mean_.size());
    return (m2_ / static_cast<double>(count_ - 1)).cwiseMax(0.0);
  }
  // Population second moment E[x^2].
  Eigen::VectorXd mean_square() const {
    if (count_ == 0) return Eigen::VectorXd::Zero(mean_.size());
    return m2_ / static_cast<double>(count_) + mean_.cwiseAbs2();
  }

 private:
  Index count_ = 0;
  Eigen::VectorXd mean_;
  Eigen::VectorXd m2_;
};

// Summary statistics of per-sample derivatives, which is all the damage
// estimators need. Avoids materializing n x P matrices at desk scale.
struct DerivativeMoments {
  ParamLayout layout;
  Index sample_count = 0;
  Eigen::VectorXd grad_mean;
  Eigen::VectorXd grad_sq_mean;
  Eigen::VectorXd hess_mean;  // empty for first-order runs
  Eigen::VectorXd hess_var;   // n-1 denominator

  Eigen::VectorXd hess_sd() const { return hess_var.cwiseSqrt(); }
};

namespace detail {

inline constexpr Index kDerivativeChunk = 64;

template <typename Scalar>
[[noreturn]] void throw_non_finite(const ParamLayout& layout, const VectorX<Scalar>& v, const char* what) {
  Index bad = 0;
  for (Index i = 0; i < v.size(); ++i)
    if (!std::isfinite(static_cast<double>(v(i)))) {
      bad = i;
      break;
    }
  const ParamIndex p = layout.locate(bad);
  throw NumericalError(std::string("non-finite ") + what + " at parameter " + std::to_string(bad) + " (layer " +
                       std::to_string(p.layer) + ", row " + std::to_string(p.row) + ", col " +
                       std::to_string(p.col) + ")");
}

// Eval-mode backward pass over a block of samples. Calls
// visit(sample_offset, gradient, hessian_diag) once per sample, in order;
// hessian_diag is empty unless second_order is set.
//
// Pre-activations of layer l are z_l = W_l a_{l-1} + b_l. The parameter
// Hessian diagonal follows from the pre-activation Hessian H_l because z_l is
// linear in W_l:  d2L/dW_l(i,j)^2 = H_l(i,i) * a_{l-1}(j)^2.  H_l itself is
// propagated exactly (full matrix, per sample):
//   H_l = diag(s1) W^T H_{l+1} W diag(s1) + diag(s2 * W^T delta_{l+1})
// with s1 = act'(u) * bn_scale, s2 = act''(u) * bn_scale^2, W = W_{l+1}.
// Only its diagonal enters the damage estimates.
template <typename Scalar, typename Visitor>
void visit_sample_derivatives(const Model<Scalar>& model, const Batch<Scalar>& batch, bool second_order,
                              Visitor&& visit) {
  if (batch.size() < 1) throw DimensionError("batch is empty");
  if (batch.labels.size() != batch.size()) throw DimensionError("labels and features differ in sample count");
  const ParamLayout layout = ParamLayout::all(model);
  const auto trace = forward_trace(model, batch.features);
  const Index n_layers = static_cast<Index>(model.layers.size());
  const Index m = batch.size();

  std::vector<MatrixX<Scalar>> delta(n_layers), upstream(n_layers), s1(n_layers), s2(n_layers);
  VectorX<Scalar> out_d2(m);
  delta[n_layers - 1].resize(1, m);
  for (Index s = 0; s < m; ++s) {
    const auto d = output_derivatives(model.loss, trace.z.back()(0, s), batch.labels(s));
    delta[n_layers - 1](0, s) = d.d1;
    out_d2(s) = d.d2;
  }
  for (Index l = n_layers - 2; l >= 0; --l) {
    const auto& layer = model.layers[l];
    upstream[l].noalias() = model.layers[l + 1].weight.transpose() * delta[l + 1];
    s1[l] = activate_d1(layer.activation, trace.u[l].array()).matrix();
    if (second_order) s2[l] = activate_d2(layer.activation, trace.u[l].array()).matrix();
    if (layer.batchnorm) {
      const VectorX<Scalar> scale = layer.batchnorm->scale();
      s1[l].array().colwise() *= scale.array();
      if (second_order) s2[l].array().colwise() *= scale.array().square();
    }
    delta[l] = (upstream[l].array() * s1[l].array()).matrix();
  }

  std::vector<VectorX<Scalar>> mask_factor(n_layers);
  for (Index l = 0; l < n_layers; ++l) {
    const auto& layer = model.layers[l];
    if (!layer.mask) continue;
    RowMajorMatrixX<Scalar> rm = layer.mask->template cast<Scalar>();
    mask_factor[l] = Eigen::Map<const VectorX<Scalar>>(rm.data(), rm.size());
  }

  VectorX<Scalar> grad(layout.size());
  VectorX<Scalar> hess;
  if (second_order) hess.resize(layout.size());
  std::vector<VectorX<Scalar>> hdiag(n_layers);
  MatrixX<Scalar> h_next, h_cur, t;

  for (Index s = 0; s < m; ++s) {
    if (second_order) {
      h_next.resize(1, 1);
      h_next(0, 0) = out_d2(s);
      hdiag[n_layers - 1] = VectorX<Scalar>::Constant(1, out_d2(s));
      for (Index l = n_layers - 2; l >= 0; --l) {
        const auto& w = model.layers[l + 1].weight;
        t.noalias() = h_next * w;
        VectorX<Scalar> curvature;
        if (l == 0) {
          curvature = (w.array() * t.array()).colwise().sum().transpose();
        } else {
          h_cur.noalias() = w.transpose() * t;
          curvature = h_cur.diagonal();
        }
        const auto d1 = s1[l].col(s).array();
        const auto d2 = s2[l].col(s).array();
        hdiag[l] = (d1.square() * curvature.array() + d2 * upstream[l].col(s).array()).matrix();
        if (l > 0) {
          h_cur.array() *= (s1[l].col(s) * s1[l].col(s).transpose()).array();
          h_cur.diagonal().array() += d2 * upstream[l].col(s).array();
          std::swap(h_next, h_cur);
        }
      }
    }

    for (Index l = 0; l < n_layers; ++l) {
      const auto& layer = model.layers[l];
      const Index in = layer.in_width();
      const auto prev = l == 0 ? trace.input.col(s) : trace.a[l - 1].col(s);
      Eigen::Map<RowMajorMatrixX<Scalar>> g(grad.data() + layout.offset(l), layer.out_width(), in + 1);
      g.leftCols(in).noalias() = delta[l].col(s) * prev.transpose();
      g.col(in) = delta[l].col(s);
      if (second_order) {
        Eigen::Map<RowMajorMatrixX<Scalar>> h(hess.data() + layout.offset(l), layer.out_width(), in + 1);
        h.leftCols(in).noalias() = hdiag[l] * prev.cwiseAbs2().transpose();
        h.col(in) = hdiag[l];
      }
      if (mask_factor[l].size() > 0) {
        grad.segment(layout.offset(l), layout.layer_size(l)).array() *= mask_factor[l].array();
        if (second_order) hess.segment(layout.offset(l), layout.layer_size(l)).array() *= mask_factor[l].array();
      }
    }
    if (!grad.allFinite()) throw_non_finite(layout, grad, "gradient");
    if (second_order && !hess.allFinite()) throw_non_finite(layout, hess, "second derivative");
    visit(s, grad, hess);
  }
}

}  // namespace detail

// Per-sample gradients (first-order part only).
template <typename Scalar>
PerSampleDerivatives<Scalar> backward(const Model<Scalar>& model, const Batch<Scalar>& batch) {
  PerSampleDerivatives<Scalar> out;
  out.layout = ParamLayout::all(model);
  out.sample_count = batch.size();
  out.gradient.resize(out.layout.size(), batch.size());
  detail::visit_sample_derivatives(model, batch, false,
                                   [&](Index s, const VectorX<Scalar>& g, const VectorX<Scalar>&) {
                                     out.gradient.col(s) = g;
                                   });
  return out;
}

// Per-sample gradients plus the exact per-sample Hessian diagonal.
template <typename Scalar>
PerSampleDerivatives<Scalar> hessian_diag(const Model<Scalar>& model, const Batch<Scalar>& batch) {
  PerSampleDerivatives<Scalar> out;
  out.layout = ParamLayout::all(model);
  out.sample_count = batch.size();
  out.gradient.resize(out.layout.size(), batch.size());
  out.hessian_diag.resize(out.layout.size(), batch.size());
  detail::visit_sample_derivatives(model, batch, true,
                                   [&](Index s, const VectorX<Scalar>& g, const VectorX<Scalar>& h) {
                                     out.gradient.col(s) = g;
                                     out.hessian_diag.col(s) = h;
                                   });
  return out;
}

// Gradient of the mean loss, computed with batched products.
template <typename Scalar>
VectorX<Scalar> mean_loss_gradient(const Model<Scalar>& model, const Batch<Scalar>& batch) {
  if (batch.size() < 1) throw DimensionError("batch is empty");
  const ParamLayout layout = ParamLayout::all(model);
  const auto trace = forward_trace(model, batch.features);
  const Index n_layers = static_cast<Index>(model.layers.size());
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(batch.size());
  MatrixX<Scalar> delta(1, batch.size());
  for (Index s = 0; s < batch.size(); ++s)
    delta(0, s) = detail::output_derivatives(model.loss, trace.z.back()(0, s), batch.labels(s)).d1;

  VectorX<Scalar> grad(layout.size());
  for (Index l = n_layers - 1; l >= 0; --l) {
    const auto& layer = model.layers[l];
    const MatrixX<Scalar>& prev = l == 0 ? trace.input : trace.a[l - 1];
    Eigen::Map<RowMajorMatrixX<Scalar>> g(grad.data() + layout.offset(l), layer.out_width(), layer.in_width() + 1);
    g.leftCols(layer.in_width()).noalias() = inv_n * delta * prev.transpose();
    g.col(layer.in_width()) = inv_n * delta.rowwise().sum();
    if (layer.mask) g.array() *= RowMajorMatrixX<Scalar>(layer.mask->template cast<Scalar>()).array();
    if (l == 0) break;
    const auto& below = model.layers[l - 1];
    MatrixX<Scalar> up = layer.weight.transpose() * delta;
    MatrixX<Scalar> d1 = detail::activate_d1(below.activation, trace.u[l - 1].array()).matrix();
    if (below.batchnorm) d1.array().colwise() *= below.batchnorm->scale().array();
    delta = (up.array() * d1.array()).matrix();
  }
  return grad;
}

// Per-parameter moments of per-sample derivatives. Samples are processed in
// fixed-size chunks whose partial results are merged in chunk order, so the
// output is identical for any thread count.
template <typename Scalar>
DerivativeMoments derivative_moments(const Model<Scalar>& model, const Batch<Scalar>& batch, bool second_order,
                                     int threads = 1) {
  if (batch.size() < 1) throw DimensionError("batch is empty");
  const ParamLayout layout = ParamLayout::all(model);
  const Index n_chunks = (batch.size() + detail::kDerivativeChunk - 1) / detail::kDerivativeChunk;
  std::vector<MomentAccumulator> grads(n_chunks, MomentAccumulator(layout.size()));
  std::vector<MomentAccumulator> hess(second_order ? n_chunks : 0, MomentAccumulator(layout.size()));

  parallel_for(n_chunks, threads, [&](Index c) {
    const Index start = c * detail::kDerivativeChunk;
    const Index count = std::min(detail::kDerivativeChunk, batch.size() - start);
    detail::visit_sample_derivatives(model, batch.middle(start, count), second_order,
                                     [&](Index, const VectorX<Scalar>& g, const VectorX<Scalar>& h) {
                                       grads[c].push(g);
                                       if (second_order) hess[c].push(h);
                                     });
  });

  for (Index c = 1; c < n_chunks; ++c) {
    grads[0].merge(grads[c]);
    if (second_order) hess[0].merge(hess[c]);
  }
  DerivativeMoments out;
  out.layout = layout;
  out.sample_count = batch.size();
  out.grad_mean = grads[0].mean();
  out.grad_sq_mean = grads[0].mean_square();
  if (second_order) {
    out.hess_mean = hess[0].mean();
    out.hess_var = hess[0].variance();
  }
  return out;
}

}  // namespace prunekit
