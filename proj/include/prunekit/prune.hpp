#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "prunekit/damage.hpp"

namespace prunekit {

enum class PruneScope { per_layer, global };
// What happens to the deleted neuron's outgoing weights when two neurons merge.
enum class MergeOutgoing { sum, drop };

namespace detail {

inline Index fraction_count(double p, Index n) {
  return static_cast<Index>(std::floor(p * static_cast<double>(n) + 1e-9));
}

inline void check_fraction(double p) {
  if (!(p > 0.0 && p < 1.0)) throw SpecError("prune fraction must be in (0, 1)");
}

template <typename V>
void erase_entries(V& v, const std::vector<Index>& sorted_removed) {
  V out(v.size() - static_cast<Index>(sorted_removed.size()));
  Index dst = 0;
  std::size_t r = 0;
  for (Index i = 0; i < v.size(); ++i) {
    if (r < sorted_removed.size() && sorted_removed[r] == i) {
      ++r;
      continue;
    }
    out(dst++) = v(i);
  }
  v = std::move(out);
}

template <typename M>
M erase_rows(const M& m, const std::vector<Index>& sorted_removed) {
  M out(m.rows() - static_cast<Index>(sorted_removed.size()), m.cols());
  Index dst = 0;
  std::size_t r = 0;
  for (Index i = 0; i < m.rows(); ++i) {
    if (r < sorted_removed.size() && sorted_removed[r] == i) {
      ++r;
      continue;
    }
    out.row(dst++) = m.row(i);
  }
  return out;
}

template <typename M>
M erase_cols(const M& m, const std::vector<Index>& sorted_removed) {
  M out(m.rows(), m.cols() - static_cast<Index>(sorted_removed.size()));
  Index dst = 0;
  std::size_t r = 0;
  for (Index i = 0; i < m.cols(); ++i) {
    if (r < sorted_removed.size() && sorted_removed[r] == i) {
      ++r;
      continue;
    }
    out.col(dst++) = m.col(i);
  }
  return out;
}

// Indices of the `count` smallest damages, ties broken by index.
inline std::vector<Index> lowest(const Eigen::VectorXd& damage, const std::vector<Index>& candidates, Index count) {
  std::vector<Index> c = candidates;
  auto less = [&](Index a, Index b) { return damage(a) < damage(b) || (damage(a) == damage(b) && a < b); };
  count = std::min<Index>(count, static_cast<Index>(c.size()));
  std::partial_sort(c.begin(), c.begin() + count, c.end(), less);
  c.resize(static_cast<std::size_t>(count));
  return c;
}

}  // namespace detail

// Masks the lowest-damage unmasked prunable parameters: floor(p * unmasked)
// in each hidden layer (per_layer), or across all hidden layers (global).
// Already-masked parameters stay masked. Ties go to the lower (layer, row, col).
template <typename Scalar>
Model<Scalar> prune_parameters(Model<Scalar> model, const DamageReport& report, double p,
                               PruneScope scope = PruneScope::per_layer) {
  detail::check_fraction(p);
  if (!(report.layout == ParamLayout::prunable(model))) throw DimensionError("damage report does not match model");
  if (!report.damage.allFinite()) throw NumericalError("damage report contains non-finite values");
  const ParamLayout& layout = report.layout;

  auto unmasked_in = [&](Index l, std::vector<Index>& out) {
    const auto& layer = model.layers[l];
    for (Index r = 0; r < layout.rows(l); ++r)
      for (Index c = 0; c < layout.cols(l); ++c)
        if (!layer.is_masked(r, c)) out.push_back(layout.flat({l, r, c}));
  };
  auto mask_entries = [&](const std::vector<Index>& flat) {
    for (Index f : flat) {
      const ParamIndex pi = layout.locate(f);
      auto& layer = model.layers[pi.layer];
      if (!layer.mask) layer.mask = MaskMatrix::Ones(layer.out_width(), layer.in_width() + 1);
      (*layer.mask)(pi.row, pi.col) = 0;
    }
  };

  if (scope == PruneScope::per_layer) {
    for (Index l = 0; l < layout.layer_count(); ++l) {
      std::vector<Index> candidates;
      unmasked_in(l, candidates);
      mask_entries(detail::lowest(report.damage, candidates,
                                  detail::fraction_count(p, static_cast<Index>(candidates.size()))));
    }
  } else {
    std::vector<Index> candidates;
    for (Index l = 0; l < layout.layer_count(); ++l) unmasked_in(l, candidates);
    mask_entries(detail::lowest(report.damage, candidates,
                                detail::fraction_count(p, static_cast<Index>(candidates.size()))));
  }
  model.apply_masks();
  return model;
}

// Structurally deletes neurons of a hidden layer: their weight rows, biases,
// batch-norm entries and mask rows, plus the matching columns of the next layer.
template <typename Scalar>
Model<Scalar> remove_neurons(Model<Scalar> model, Index layer, std::vector<Index> neurons) {
  if (layer < 0 || layer >= model.hidden_count()) throw SpecError("only hidden layers can lose neurons");
  std::sort(neurons.begin(), neurons.end());
  neurons.erase(std::unique(neurons.begin(), neurons.end()), neurons.end());
  if (neurons.empty()) return model;
  auto& cur = model.layers[layer];
  if (neurons.front() < 0 || neurons.back() >= cur.out_width()) throw SpecError("neuron index out of range");
  if (static_cast<Index>(neurons.size()) >= cur.out_width()) throw SpecError("cannot remove every neuron of a layer");

  cur.weight = detail::erase_rows(cur.weight, neurons);
  detail::erase_entries(cur.bias, neurons);
  if (cur.batchnorm) {
    detail::erase_entries(cur.batchnorm->gamma, neurons);
    detail::erase_entries(cur.batchnorm->beta, neurons);
    detail::erase_entries(cur.batchnorm->running_mean, neurons);
    detail::erase_entries(cur.batchnorm->running_var, neurons);
  }
  if (cur.mask) cur.mask = detail::erase_rows(*cur.mask, neurons);

  auto& next = model.layers[layer + 1];
  next.weight = detail::erase_cols(next.weight, neurons);
  if (next.mask) next.mask = detail::erase_cols(*next.mask, neurons);
  return model;
}

// Neurons removed from a layer of width w in one per-layer round:
// max(1, floor(p * w)), i.e. ceil(w * (1 - p)) survivors once p * w >= 1.
inline Index neurons_to_remove(Index width, double p) {
  return std::max<Index>(1, detail::fraction_count(p, width));
}

struct GlobalSelectionOptions {
  Index layer_floor = 1;
  // Scarcity penalty: damage + lambda * base_width / remaining_width. When
  // unset, lambda = lambda_scale * |median neuron damage|.
  std::optional<double> lambda;
  double lambda_scale = 0.01;
  // Widths the penalty is measured against; defaults to the report's widths.
  std::vector<Index> base_widths;
};

// Greedy global choice of `remove_count` neurons across hidden layers. The
// penalty grows as a layer empties and no layer drops below layer_floor.
// Returns removed neuron indices per layer (sorted).
std::vector<std::vector<Index>> global_neuron_selection(const NeuronDamageReport& report, Index remove_count,
                                                        const GlobalSelectionOptions& options = {});

// Removes whole neurons with the lowest damage. Per-layer scope removes
// neurons_to_remove(width, p) from every hidden layer; global scope removes
// max(1, floor(p * total)) neurons chosen by global_neuron_selection.
template <typename Scalar>
Model<Scalar> prune_neurons(Model<Scalar> model, const NeuronDamageReport& report, double p,
                            PruneScope scope = PruneScope::per_layer, const GlobalSelectionOptions& global = {}) {
  detail::check_fraction(p);
  if (static_cast<Index>(report.layers.size()) != model.hidden_count())
    throw DimensionError("neuron report does not match model");
  for (Index l = 0; l < model.hidden_count(); ++l) {
    if (report.layers[l].size() != model.layers[l].out_width())
      throw DimensionError("neuron report does not match layer " + std::to_string(l));
    if (!report.layers[l].allFinite()) throw NumericalError("neuron report contains non-finite values");
  }

  std::vector<std::vector<Index>> removed(static_cast<std::size_t>(model.hidden_count()));
  if (scope == PruneScope::per_layer) {
    for (Index l = 0; l < model.hidden_count(); ++l) {
      const Index width = model.layers[l].out_width();
      const Index count = neurons_to_remove(width, p);
      if (count >= width)
        throw SpecError("per-layer pruning would empty hidden layer " + std::to_string(l));
      std::vector<Index> all(static_cast<std::size_t>(width));
      std::iota(all.begin(), all.end(), Index{0});
      removed[l] = detail::lowest(report.layers[l], all, count);
    }
  } else {
    if (global.layer_floor < 1) throw SpecError("layer_floor must be >= 1");
    const Index total = report.neuron_count();
    removed = global_neuron_selection(report, std::max<Index>(1, detail::fraction_count(p, total)), global);
  }
  for (Index l = 0; l < model.hidden_count(); ++l) model = remove_neurons(std::move(model), l, removed[l]);
  return model;
}

// Closest pair (i < j) of neurons by Euclidean distance between their
// incoming weight + bias vectors. Ties go to the lexicographically smallest pair.
template <typename Scalar>
std::pair<Index, Index> nearest_neuron_pair(const Model<Scalar>& model, Index layer) {
  const auto& cur = model.layers.at(layer);
  const Index w = cur.out_width();
  if (w < 2) throw SpecError("layer has fewer than two neurons");
  MatrixX<double> f(w, cur.in_width() + 1);
  f.leftCols(cur.in_width()) = cur.weight.template cast<double>();
  f.col(cur.in_width()) = cur.bias.template cast<double>();
  std::pair<Index, Index> best{0, 1};
  double best_d = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < w; ++i)
    for (Index j = i + 1; j < w; ++j) {
      const double d = (f.row(i) - f.row(j)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = {i, j};
      }
    }
  return best;
}

// Repeatedly merges the closest pair of neurons of a hidden layer: the lower
// index keeps the average of both incoming vectors (and batch-norm entries),
// receives the sum of both outgoing weight columns (MergeOutgoing::sum), and
// the other neuron is deleted. Distances are recomputed after every merge.
template <typename Scalar>
Model<Scalar> merge_neurons(Model<Scalar> model, Index layer, Index merge_count,
                            MergeOutgoing outgoing = MergeOutgoing::sum) {
  if (layer < 0 || layer >= model.hidden_count()) throw SpecError("only hidden layers can merge neurons");
  if (merge_count < 0 || merge_count > model.layers[layer].out_width() - 1)
    throw SpecError("merge_count exceeds layer width - 1");
  for (Index step = 0; step < merge_count; ++step) {
    const auto [keep, gone] = nearest_neuron_pair(model, layer);
    auto& cur = model.layers[layer];
    const Scalar half(0.5);
    cur.weight.row(keep) = half * (cur.weight.row(keep) + cur.weight.row(gone));
    cur.bias(keep) = half * (cur.bias(keep) + cur.bias(gone));
    if (cur.batchnorm) {
      auto& bn = *cur.batchnorm;
      for (auto* v : {&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var}) (*v)(keep) = half * ((*v)(keep) + (*v)(gone));
    }
    if (cur.mask) cur.mask->row(keep) = cur.mask->row(keep).cwiseMax(cur.mask->row(gone));
    auto& next = model.layers[layer + 1];
    if (outgoing == MergeOutgoing::sum) {
      next.weight.col(keep) += next.weight.col(gone);
      if (next.mask) next.mask->col(keep) = next.mask->col(keep).cwiseMax(next.mask->col(gone));
    }
    model = remove_neurons(std::move(model), layer, {gone});
  }
  model.apply_masks();
  return model;
}

// Architectures trained from scratch for comparison with pruned models.
struct ScratchArchitecture {
  ModelSpec spec;
  // Per hidden layer connection masks (fixed-connection-fraction only).
  std::vector<MaskMatrix> masks;
};

enum class ScratchMode { fixed_neuron_fraction, fixed_connection_fraction, from_neuron_report };

// Each hidden width becomes floor(width * (1 - amount)); a zero width is an error.
ScratchArchitecture scratch_fixed_neuron_fraction(const ModelSpec& base, double amount);
// Same widths; a seeded mask removes round(amount * in * out) weights of each hidden layer.
ScratchArchitecture scratch_fixed_connection_fraction(const ModelSpec& base, double amount, std::uint64_t seed);
// Widths surviving global selection of floor(amount * total) neurons.
ScratchArchitecture scratch_from_neuron_report(const ModelSpec& base, const NeuronDamageReport& report,
                                               double amount, const GlobalSelectionOptions& options = {});

template <typename Scalar>
Model<Scalar> instantiate(const ScratchArchitecture& arch, std::uint64_t seed) {
  Model<Scalar> model = init_random<Scalar>(arch.spec, seed);
  for (std::size_t l = 0; l < arch.masks.size(); ++l) set_mask(model, static_cast<Index>(l), arch.masks[l]);
  return model;
}

}  // namespace prunekit
