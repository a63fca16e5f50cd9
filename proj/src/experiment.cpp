#include "prunekit/experiment.hpp"

#include <ostream>

namespace prunekit {

std::string_view to_string(PruneLevel level) {
  return level == PruneLevel::parameter ? "parameter" : "neuron";
}

PruneLevel parse_prune_level(std::string_view name) {
  if (name == "parameter") return PruneLevel::parameter;
  if (name == "neuron") return PruneLevel::neuron;
  throw SpecError("unknown prune level '" + std::string(name) + "' (expected parameter or neuron)");
}

std::string_view to_string(PruneMethod method) {
  switch (method) {
    case PruneMethod::random: return "random";
    case PruneMethod::magnitude: return "magnitude";
    case PruneMethod::obd: return "obd";
    case PruneMethod::obd_sd: return "obd_sd";
    case PruneMethod::lm: return "lm";
    case PruneMethod::dropout_regression: return "dropout";
    case PruneMethod::merge: return "merge";
  }
  return "?";
}

PruneMethod parse_prune_method(std::string_view name) {
  for (auto m : {PruneMethod::random, PruneMethod::magnitude, PruneMethod::obd, PruneMethod::obd_sd, PruneMethod::lm,
                 PruneMethod::dropout_regression, PruneMethod::merge})
    if (to_string(m) == name) return m;
  throw SpecError("unknown prune method '" + std::string(name) +
                  "' (expected random, magnitude, obd, obd_sd, lm, dropout or merge)");
}

std::string_view to_string(PruneScope scope) {
  return scope == PruneScope::per_layer ? "per_layer" : "global";
}

PruneScope parse_prune_scope(std::string_view name) {
  if (name == "per_layer") return PruneScope::per_layer;
  if (name == "global") return PruneScope::global;
  throw SpecError("unknown prune scope '" + std::string(name) + "' (expected per_layer or global)");
}

std::optional<DamageMethod> damage_method_of(PruneMethod method) {
  switch (method) {
    case PruneMethod::random: return DamageMethod::random;
    case PruneMethod::magnitude: return DamageMethod::magnitude;
    case PruneMethod::obd: return DamageMethod::obd;
    case PruneMethod::obd_sd: return DamageMethod::obd_sd;
    case PruneMethod::lm: return DamageMethod::lm;
    default: return std::nullopt;
  }
}

void PruneSchedule::validate() const {
  if (!(fraction > 0.0 && fraction < 1.0)) throw SpecError("fraction must be in (0, 1)");
  if (rounds < 0) throw SpecError("rounds must be >= 0");
  if (level == PruneLevel::parameter && !damage_method_of(method))
    throw SpecError("method '" + std::string(to_string(method)) + "' only applies at neuron level");
  if (method == PruneMethod::merge && scope != PruneScope::per_layer)
    throw SpecError("merge supports per_layer scope only");
  if (layer_floor < 1) throw SpecError("layer_floor must be >= 1");
  if (lambda && !(*lambda >= 0.0)) throw SpecError("lambda must be >= 0");
  if (finetune.epochs < 0) throw SpecError("finetune.epochs must be >= 0");
  if (finetune.sample_count < 0) throw SpecError("finetune.sample_count must be >= 0");
  if (finetune.batch_size < 1) throw SpecError("finetune.batch_size must be >= 1");
  if (!(finetune.learning_rate > 0.0)) throw SpecError("finetune.learning_rate must be > 0");
  if (damage_sample_count < 0) throw SpecError("damage_sample_count must be >= 0");
  if (method == PruneMethod::obd_sd && damage_sample_count == 1)
    throw SpecError("obd_sd needs damage_sample_count >= 2");
  if (!(target_fpr > 0.0 && target_fpr < 1.0)) throw SpecError("target_fpr must be in (0, 1)");
  if (threads < 1) throw SpecError("threads must be >= 1");
}

void write_trace_csv(std::ostream& out, const PruneTrace& trace) {
  const auto old_precision = out.precision(17);
  out << "round,method,level,params,neurons_per_layer,raw_bytes,zip_bytes,auc,tpr_at_fpr,loss\n";
  for (const auto& r : trace.records) {
    out << r.round << ',' << to_string(trace.method) << ',' << to_string(trace.level) << ',' << r.params << ',';
    for (std::size_t i = 0; i < r.neurons_per_layer.size(); ++i) out << (i ? ";" : "") << r.neurons_per_layer[i];
    out << ',' << r.sizes.raw_bytes << ',' << r.sizes.zip_bytes << ',' << r.metrics.auc << ',' << r.metrics.tpr_at_fpr
        << ',' << r.metrics.mean_loss << '\n';
  }
  out.precision(old_precision);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t round, std::uint64_t stream) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ round) ^ stream);
}

}  // namespace prunekit
