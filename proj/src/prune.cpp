#include "prunekit/prune.hpp"

#include <random>

namespace prunekit {
namespace {

void check_amount(double amount) {
  if (!(amount >= 0.0 && amount < 1.0)) throw SpecError("scratch amount must be in [0, 1)");
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

}  // namespace

std::vector<std::vector<Index>> global_neuron_selection(const NeuronDamageReport& report, Index remove_count,
                                                        const GlobalSelectionOptions& options) {
  if (options.layer_floor < 1) throw SpecError("layer_floor must be >= 1");
  const std::size_t n_layers = report.layers.size();
  std::vector<Index> base = options.base_widths;
  if (base.empty())
    for (const auto& l : report.layers) base.push_back(l.size());
  if (base.size() != n_layers) throw DimensionError("base_widths must have one entry per hidden layer");

  double lambda = 0.0;
  if (options.lambda) {
    lambda = *options.lambda;
  } else {
    std::vector<double> all;
    for (const auto& l : report.layers) all.insert(all.end(), l.data(), l.data() + l.size());
    lambda = options.lambda_scale * std::abs(median(all));
  }

  // Per-layer candidates in ascending (damage, index) order; the penalty is
  // shared within a layer, so only each layer's cheapest neuron competes.
  std::vector<std::vector<Index>> order(n_layers);
  std::vector<std::size_t> next(n_layers, 0);
  std::vector<Index> remaining(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& d = report.layers[l];
    order[l].resize(static_cast<std::size_t>(d.size()));
    std::iota(order[l].begin(), order[l].end(), Index{0});
    std::sort(order[l].begin(), order[l].end(),
              [&](Index a, Index b) { return d(a) < d(b) || (d(a) == d(b) && a < b); });
    remaining[l] = d.size();
  }

  std::vector<std::vector<Index>> removed(n_layers);
  for (Index step = 0; step < remove_count; ++step) {
    std::ptrdiff_t best = -1;
    double best_score = 0.0;
    for (std::size_t l = 0; l < n_layers; ++l) {
      if (remaining[l] <= options.layer_floor) continue;
      const Index neuron = order[l][next[l]];
      const double score = report.layers[l](neuron) +
                           lambda * static_cast<double>(base[l]) / static_cast<double>(remaining[l]);
      if (best < 0 || score < best_score) {
        best = static_cast<std::ptrdiff_t>(l);
        best_score = score;
      }
    }
    if (best < 0) break;
    const auto l = static_cast<std::size_t>(best);
    removed[l].push_back(order[l][next[l]++]);
    --remaining[l];
  }
  for (auto& r : removed) std::sort(r.begin(), r.end());
  return removed;
}

ScratchArchitecture scratch_fixed_neuron_fraction(const ModelSpec& base, double amount) {
  check_amount(amount);
  base.validate();
  ScratchArchitecture arch{base, {}};
  for (std::size_t i = 0; i < arch.spec.hidden.size(); ++i) {
    auto& h = arch.spec.hidden[i];
    const int width = static_cast<int>(std::floor(h.width * (1.0 - amount) + 1e-9));
    if (width < 1) throw SpecError("amount empties hidden layer " + std::to_string(i));
    h.width = width;
  }
  return arch;
}

ScratchArchitecture scratch_fixed_connection_fraction(const ModelSpec& base, double amount, std::uint64_t seed) {
  check_amount(amount);
  base.validate();
  ScratchArchitecture arch{base, {}};
  std::mt19937_64 rng(seed);
  int in = base.input_dim;
  for (const auto& h : base.hidden) {
    MaskMatrix mask = MaskMatrix::Ones(h.width, in + 1);
    const Index weights = static_cast<Index>(h.width) * in;
    const auto drop = static_cast<Index>(std::llround(amount * static_cast<double>(weights)));
    std::vector<Index> idx(static_cast<std::size_t>(weights));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    for (Index k = 0; k < drop; ++k) mask(idx[k] / in, idx[k] % in) = 0;
    arch.masks.push_back(std::move(mask));
    in = h.width;
  }
  return arch;
}

ScratchArchitecture scratch_from_neuron_report(const ModelSpec& base, const NeuronDamageReport& report,
                                               double amount, const GlobalSelectionOptions& options) {
  check_amount(amount);
  base.validate();
  if (report.layers.size() != base.hidden.size()) throw DimensionError("neuron report does not match base spec");
  for (std::size_t l = 0; l < base.hidden.size(); ++l)
    if (report.layers[l].size() != base.hidden[l].width) throw DimensionError("neuron report does not match base spec");
  const auto removed = global_neuron_selection(
      report, static_cast<Index>(std::floor(amount * static_cast<double>(report.neuron_count()) + 1e-9)), options);
  ScratchArchitecture arch{base, {}};
  for (std::size_t l = 0; l < base.hidden.size(); ++l)
    arch.spec.hidden[l].width -= static_cast<int>(removed[l].size());
  return arch;
}

}  // namespace prunekit
