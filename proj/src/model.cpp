#include "prunekit/model.hpp"

#include <algorithm>

namespace prunekit {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::elu: return "elu";
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

std::string_view to_string(LossKind l) {
  return l == LossKind::binary_cross_entropy ? "bce" : "squared";
}

Activation parse_activation(std::string_view name) {
  if (name == "elu") return Activation::elu;
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  if (name == "sigmoid") return Activation::sigmoid;
  throw SpecError("unknown activation '" + std::string(name) + "'");
}

void ModelSpec::validate() const {
  if (input_dim < 1) throw SpecError("input_dim must be >= 1");
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    const auto& h = hidden[i];
    const std::string where = "hidden layer " + std::to_string(i);
    if (h.width < 1) throw SpecError(where + ": width must be >= 1");
    if (!(h.dropout_rate >= 0.0 && h.dropout_rate < 1.0))
      throw SpecError(where + ": dropout_rate must be in [0, 1)");
    if (h.activation == Activation::sigmoid)
      throw SpecError(where + ": hidden activation must be elu, relu or identity");
  }
  if (output.width != 1) throw SpecError("output width must be 1 (single binary score)");
  if (loss == LossKind::binary_cross_entropy && output.activation != Activation::sigmoid)
    throw SpecError("binary cross-entropy requires a sigmoid output");
  if (loss == LossKind::squared_error && output.activation != Activation::identity)
    throw SpecError("squared error requires an identity output");
}

std::vector<int> ModelSpec::hidden_widths() const {
  std::vector<int> w;
  for (const auto& h : hidden) w.push_back(h.width);
  return w;
}

ModelSpec ModelSpec::desk_default(int input_dim, double scale, bool batchnorm, double dropout_rate) {
  ModelSpec spec;
  spec.input_dim = input_dim;
  for (int full : {1024, 768, 512, 512, 512}) {
    const int width = std::max(1, static_cast<int>(std::lround(full * scale)));
    spec.hidden.push_back({width, Activation::elu, batchnorm, dropout_rate});
  }
  spec.output = {1, Activation::sigmoid};
  spec.loss = LossKind::binary_cross_entropy;
  return spec;
}

ParamIndex ParamLayout::locate(Index flat) const {
  if (flat < 0 || flat >= size()) throw DimensionError("parameter index out of range");
  const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), flat);
  const Index layer = static_cast<Index>(it - offsets_.begin()) - 1;
  const Index local = flat - offsets_[layer];
  return {layer, local / cols_[layer], local % cols_[layer]};
}

}  // namespace prunekit
