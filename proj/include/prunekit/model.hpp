#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "prunekit/error.hpp"

namespace prunekit {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowMajorMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// 1 = parameter alive, 0 = pruned. Shape out x (in + 1); the last column is the bias.
using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

enum class Activation : std::uint8_t { elu = 0, relu = 1, identity = 2, sigmoid = 3 };
enum class LossKind : std::uint8_t { binary_cross_entropy = 0, squared_error = 1 };

inline constexpr double kBatchNormEpsilon = 1e-5;

std::string_view to_string(Activation a);
std::string_view to_string(LossKind l);
Activation parse_activation(std::string_view name);

struct HiddenLayerSpec {
  int width = 1;
  Activation activation = Activation::elu;
  bool has_batchnorm = false;
  double dropout_rate = 0.0;

  bool operator==(const HiddenLayerSpec&) const = default;
};

struct OutputSpec {
  int width = 1;
  Activation activation = Activation::sigmoid;

  bool operator==(const OutputSpec&) const = default;
};

struct ModelSpec {
  int input_dim = 1;
  std::vector<HiddenLayerSpec> hidden;
  OutputSpec output;
  // binary_cross_entropy pairs with a sigmoid output, squared_error with identity.
  LossKind loss = LossKind::binary_cross_entropy;

  bool operator==(const ModelSpec&) const = default;

  void validate() const;
  std::vector<int> hidden_widths() const;

  // Five ELU hidden layers 1024, 768, 512, 512, 512 multiplied by `scale`
  // (default 1/8 gives 128, 96, 64, 64, 64).
  static ModelSpec desk_default(int input_dim, double scale = 0.125, bool batchnorm = true,
                                double dropout_rate = 0.05);
};

template <typename Scalar>
struct BatchNorm {
  VectorX<Scalar> gamma, beta, running_mean, running_var;

  // Frozen (eval-mode) affine map u = scale * z + shift.
  VectorX<Scalar> scale() const {
    return (gamma.array() / (running_var.array() + Scalar(kBatchNormEpsilon)).sqrt()).matrix();
  }
  VectorX<Scalar> shift() const {
    return (beta.array() - scale().array() * running_mean.array()).matrix();
  }

  template <typename T>
  BatchNorm<T> cast() const {
    return {gamma.template cast<T>(), beta.template cast<T>(), running_mean.template cast<T>(),
            running_var.template cast<T>()};
  }
};

template <typename Scalar>
struct DenseLayer {
  MatrixX<Scalar> weight;  // out x in
  VectorX<Scalar> bias;    // out
  Activation activation = Activation::elu;
  double dropout_rate = 0.0;
  std::optional<BatchNorm<Scalar>> batchnorm;
  std::optional<MaskMatrix> mask;

  Index in_width() const { return weight.cols(); }
  Index out_width() const { return weight.rows(); }
  Index parameter_count() const { return weight.rows() * (weight.cols() + 1); }

  bool is_masked(Index row, Index col) const { return mask && (*mask)(row, col) == 0; }

  Index unmasked_count() const {
    if (!mask) return parameter_count();
    return mask->template cast<Index>().sum();
  }

  // Zero every masked entry in place.
  void apply_mask() {
    if (!mask) return;
    const Index in = in_width();
    weight.array() *= mask->leftCols(in).template cast<Scalar>().array();
    bias.array() *= mask->col(in).template cast<Scalar>().array();
  }

  template <typename T>
  DenseLayer<T> cast() const {
    DenseLayer<T> out;
    out.weight = weight.template cast<T>();
    out.bias = bias.template cast<T>();
    out.activation = activation;
    out.dropout_rate = dropout_rate;
    if (batchnorm) out.batchnorm = batchnorm->template cast<T>();
    out.mask = mask;
    return out;
  }
};

// Feed-forward stack: layers[0 .. hidden_count()-1] are the hidden (prunable)
// layers, layers.back() is the output layer.
template <typename Scalar>
struct Model {
  int input_dim = 0;
  std::vector<DenseLayer<Scalar>> layers;
  LossKind loss = LossKind::binary_cross_entropy;

  Index hidden_count() const { return static_cast<Index>(layers.size()) - 1; }
  const DenseLayer<Scalar>& output_layer() const { return layers.back(); }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& l : layers) n += l.parameter_count();
    return n;
  }
  Index prunable_parameter_count() const {
    Index n = 0;
    for (Index l = 0; l < hidden_count(); ++l) n += layers[l].parameter_count();
    return n;
  }
  Index unmasked_prunable_count() const {
    Index n = 0;
    for (Index l = 0; l < hidden_count(); ++l) n += layers[l].unmasked_count();
    return n;
  }
  std::vector<int> hidden_widths() const {
    std::vector<int> w;
    for (Index l = 0; l < hidden_count(); ++l) w.push_back(static_cast<int>(layers[l].out_width()));
    return w;
  }

  ModelSpec spec() const {
    ModelSpec s;
    s.input_dim = input_dim;
    for (Index l = 0; l < hidden_count(); ++l) {
      const auto& layer = layers[l];
      s.hidden.push_back({static_cast<int>(layer.out_width()), layer.activation,
                          layer.batchnorm.has_value(), layer.dropout_rate});
    }
    s.output = {static_cast<int>(output_layer().out_width()), output_layer().activation};
    s.loss = loss;
    return s;
  }

  void apply_masks() {
    for (auto& l : layers) l.apply_mask();
  }

  template <typename T>
  Model<T> cast() const {
    Model<T> m;
    m.input_dim = input_dim;
    m.loss = loss;
    for (const auto& l : layers) m.layers.push_back(l.template cast<T>());
    return m;
  }

  // Checks that shapes chain from input_dim to the output width.
  void check_consistency() const;
};

// Location of one weight-or-bias parameter. `col == in_width` denotes the bias.
struct ParamIndex {
  Index layer = 0;
  Index row = 0;
  Index col = 0;

  bool operator==(const ParamIndex&) const = default;
};

// Flat numbering of the parameters of a model. Each layer contributes its
// augmented matrix [W | b] in row-major order, layers in forward order. The
// prunable (hidden) parameters are therefore a prefix of the full layout.
class ParamLayout {
 public:
  ParamLayout() = default;

  template <typename Scalar>
  static ParamLayout all(const Model<Scalar>& model) {
    return ParamLayout(model, static_cast<Index>(model.layers.size()));
  }
  template <typename Scalar>
  static ParamLayout prunable(const Model<Scalar>& model) {
    return ParamLayout(model, model.hidden_count());
  }

  Index size() const { return offsets_.empty() ? 0 : offsets_.back(); }
  Index layer_count() const { return static_cast<Index>(rows_.size()); }
  Index offset(Index layer) const { return offsets_[layer]; }
  Index rows(Index layer) const { return rows_[layer]; }
  // Columns of the augmented matrix (in_width + 1).
  Index cols(Index layer) const { return cols_[layer]; }
  Index layer_size(Index layer) const { return rows_[layer] * cols_[layer]; }

  Index flat(const ParamIndex& p) const { return offsets_[p.layer] + p.row * cols_[p.layer] + p.col; }
  ParamIndex locate(Index flat) const;
  bool is_bias(const ParamIndex& p) const { return p.col == cols_[p.layer] - 1; }

  bool operator==(const ParamLayout&) const = default;

 private:
  template <typename Scalar>
  ParamLayout(const Model<Scalar>& model, Index layer_count) {
    offsets_.push_back(0);
    for (Index l = 0; l < layer_count; ++l) {
      rows_.push_back(model.layers[l].out_width());
      cols_.push_back(model.layers[l].in_width() + 1);
      offsets_.push_back(offsets_.back() + rows_.back() * cols_.back());
    }
  }

  std::vector<Index> offsets_;
  std::vector<Index> rows_;
  std::vector<Index> cols_;
};

// All weights and biases in ParamLayout::all order.
template <typename Scalar>
VectorX<Scalar> flat_parameters(const Model<Scalar>& model) {
  const ParamLayout layout = ParamLayout::all(model);
  VectorX<Scalar> theta(layout.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    Eigen::Map<RowMajorMatrixX<Scalar>> block(theta.data() + layout.offset(l), layer.out_width(),
                                              layer.in_width() + 1);
    block.leftCols(layer.in_width()) = layer.weight;
    block.col(layer.in_width()) = layer.bias;
  }
  return theta;
}

template <typename Scalar>
void set_flat_parameters(Model<Scalar>& model, const VectorX<Scalar>& theta) {
  const ParamLayout layout = ParamLayout::all(model);
  if (theta.size() != layout.size()) throw DimensionError("flat parameter vector has wrong length");
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& layer = model.layers[l];
    Eigen::Map<const RowMajorMatrixX<Scalar>> block(theta.data() + layout.offset(l), layer.out_width(),
                                                    layer.in_width() + 1);
    layer.weight = block.leftCols(layer.in_width());
    layer.bias = block.col(layer.in_width());
  }
  model.apply_masks();
}

template <typename Scalar>
Scalar& parameter(Model<Scalar>& model, const ParamIndex& p) {
  auto& layer = model.layers[p.layer];
  return p.col == layer.in_width() ? layer.bias(p.row) : layer.weight(p.row, p.col);
}
template <typename Scalar>
Scalar parameter(const Model<Scalar>& model, const ParamIndex& p) {
  const auto& layer = model.layers[p.layer];
  return p.col == layer.in_width() ? layer.bias(p.row) : layer.weight(p.row, p.col);
}

// Installs a mask on a layer (replacing any previous one) and zeroes the masked entries.
template <typename Scalar>
void set_mask(Model<Scalar>& model, Index layer, MaskMatrix mask) {
  auto& l = model.layers.at(layer);
  if (mask.rows() != l.out_width() || mask.cols() != l.in_width() + 1)
    throw DimensionError("mask shape does not match layer");
  l.mask = std::move(mask);
  l.apply_mask();
}

template <typename Scalar>
Model<Scalar> init_random(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  Model<Scalar> model;
  model.input_dim = spec.input_dim;
  model.loss = spec.loss;

  auto make_layer = [&rng](Index in, Index out, Activation act) {
    DenseLayer<Scalar> layer;
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    layer.weight.resize(out, in);
    // Row-major fill order so the draw sequence does not depend on storage order.
    for (Index r = 0; r < out; ++r)
      for (Index c = 0; c < in; ++c) layer.weight(r, c) = static_cast<Scalar>(dist(rng));
    layer.bias = VectorX<Scalar>::Zero(out);
    layer.activation = act;
    return layer;
  };

  Index in = spec.input_dim;
  for (const auto& h : spec.hidden) {
    auto layer = make_layer(in, h.width, h.activation);
    layer.dropout_rate = h.dropout_rate;
    if (h.has_batchnorm) {
      layer.batchnorm = BatchNorm<Scalar>{VectorX<Scalar>::Ones(h.width), VectorX<Scalar>::Zero(h.width),
                                          VectorX<Scalar>::Zero(h.width), VectorX<Scalar>::Ones(h.width)};
    }
    model.layers.push_back(std::move(layer));
    in = h.width;
  }
  model.layers.push_back(make_layer(in, spec.output.width, spec.output.activation));
  return model;
}

template <typename Scalar>
void Model<Scalar>::check_consistency() const {
  if (layers.empty()) throw DimensionError("model has no layers");
  Index in = input_dim;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.in_width() != in)
      throw DimensionError("layer " + std::to_string(l) + " input width does not chain");
    if (layer.bias.size() != layer.out_width())
      throw DimensionError("layer " + std::to_string(l) + " bias length mismatch");
    if (layer.batchnorm && layer.batchnorm->gamma.size() != layer.out_width())
      throw DimensionError("layer " + std::to_string(l) + " batch-norm length mismatch");
    if (layer.mask && (layer.mask->rows() != layer.out_width() || layer.mask->cols() != in + 1))
      throw DimensionError("layer " + std::to_string(l) + " mask shape mismatch");
    if (layer.out_width() < 1) throw DimensionError("layer " + std::to_string(l) + " is empty");
    in = layer.out_width();
  }
}

}  // namespace prunekit
