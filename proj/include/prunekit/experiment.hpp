#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "prunekit/compress.hpp"
#include "prunekit/data.hpp"
#include "prunekit/prune.hpp"
#include "prunekit/train.hpp"

namespace prunekit {

enum class PruneLevel { parameter, neuron };

// Estimators plus the two neuron-only strategies.
enum class PruneMethod { random, magnitude, obd, obd_sd, lm, dropout_regression, merge };

std::string_view to_string(PruneLevel level);
PruneLevel parse_prune_level(std::string_view name);
std::string_view to_string(PruneMethod method);
PruneMethod parse_prune_method(std::string_view name);
std::string_view to_string(PruneScope scope);
PruneScope parse_prune_scope(std::string_view name);
std::optional<DamageMethod> damage_method_of(PruneMethod method);

struct FinetuneConfig {
  int epochs = 1;
  Index sample_count = 0;  // 0 uses the whole training set
  Index batch_size = 128;
  double learning_rate = 0.01;
};

struct PruneSchedule {
  PruneLevel level = PruneLevel::parameter;
  PruneMethod method = PruneMethod::magnitude;
  double fraction = 0.10;
  int rounds = 10;
  FinetuneConfig finetune;
  PruneScope scope = PruneScope::per_layer;
  Index layer_floor = 1;
  std::optional<double> lambda;
  std::uint64_t seed = 0;
  // false computes the damage report once on the unpruned model and reuses it.
  bool recompute_damage = true;
  Index damage_sample_count = 1024;  // 0 uses the whole training set
  bool include_outgoing = false;
  MergeOutgoing merge_outgoing = MergeOutgoing::sum;
  DropoutRegressionConfig dropout;
  Precision precision = Precision::f32;
  double target_fpr = 0.001;
  int threads = 1;

  void validate() const;
};

struct RoundRecord {
  int round = 0;
  Index params = 0;  // parameters not masked, whole model
  std::vector<int> neurons_per_layer;
  SizeReport sizes;
  MetricsRecord metrics;
};

struct PruneTrace {
  PruneMethod method = PruneMethod::magnitude;
  PruneLevel level = PruneLevel::parameter;
  std::uint64_t seed = 0;
  std::vector<RoundRecord> records;
  std::optional<std::string> error;  // set when the loop stopped early
};

// Columns: round,method,level,params,neurons_per_layer,raw_bytes,zip_bytes,auc,tpr_at_fpr,loss
void write_trace_csv(std::ostream& out, const PruneTrace& trace);

// Independent 64-bit seed for (seed, round, stream).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t round, std::uint64_t stream);

// Called with every parameter-level damage report the loop computes.
using DamageObserver = std::function<void(int round, const DamageReport&)>;

namespace detail {

template <typename Scalar>
RoundRecord record_round(const Model<Scalar>& model, int round, const Batch<Scalar>& eval,
                         const PruneSchedule& s) {
  RoundRecord r;
  r.round = round;
  r.params = model.parameter_count() - (model.prunable_parameter_count() - model.unmasked_prunable_count());
  r.neurons_per_layer = model.hidden_widths();
  r.sizes = measure_sizes(model, s.precision);
  r.metrics = evaluate(model, eval, s.target_fpr);
  return r;
}

inline NeuronDamageReport select_neurons(const NeuronDamageReport& base, const std::vector<std::vector<Index>>& ids) {
  NeuronDamageReport out;
  out.source = base.source;
  for (std::size_t l = 0; l < ids.size(); ++l) {
    Eigen::VectorXd d(static_cast<Index>(ids[l].size()));
    for (std::size_t i = 0; i < ids[l].size(); ++i) d(static_cast<Index>(i)) = base.layers[l](ids[l][i]);
    out.layers.push_back(std::move(d));
  }
  return out;
}

}  // namespace detail

// Round 0 is the unpruned model. Each later round estimates damage on a
// resampled batch, prunes, fine-tunes on a fresh resample and evaluates.
// Divergence or a numerical failure ends the trace with `error` set.
template <typename Scalar>
PruneTrace prune_finetune_loop(Model<Scalar> model, const PruneSchedule& s, const Dataset& train_set,
                               const Dataset& eval_set, const DamageObserver& observer = {}) {
  s.validate();
  if (train_set.dim() != model.input_dim || eval_set.dim() != model.input_dim)
    throw DimensionError("dataset dimension does not match model input");
  const Batch<Scalar> eval = eval_set.batch<Scalar>();
  PruneTrace trace;
  trace.method = s.method;
  trace.level = s.level;
  trace.seed = s.seed;
  trace.records.push_back(detail::record_round(model, 0, eval, s));

  const auto damage_method = damage_method_of(s.method);
  const bool needs_batch = s.method == PruneMethod::obd || s.method == PruneMethod::obd_sd ||
                           s.method == PruneMethod::lm || s.method == PruneMethod::dropout_regression;
  DamageOptions options;
  options.threads = s.threads;
  GlobalSelectionOptions global;
  global.layer_floor = s.layer_floor;
  global.lambda = s.lambda;

  std::optional<DamageReport> fixed_param;
  std::optional<NeuronDamageReport> fixed_neuron;
  std::vector<std::vector<Index>> original_ids;
  for (Index l = 0; l < model.hidden_count(); ++l) {
    std::vector<Index> ids(static_cast<std::size_t>(model.layers[l].out_width()));
    std::iota(ids.begin(), ids.end(), Index{0});
    original_ids.push_back(std::move(ids));
  }

  try {
    for (int round = 1; round <= s.rounds; ++round) {
      const auto r = static_cast<std::uint64_t>(round);
      const bool fresh = s.recompute_damage || round == 1;
      Batch<Scalar> damage_batch;
      if (needs_batch && fresh) {
        const Index n = s.damage_sample_count > 0 ? std::min(s.damage_sample_count, train_set.size()) : train_set.size();
        damage_batch = resample(train_set, n, derive_seed(s.seed, r, 1)).template batch<Scalar>();
      }
      const std::uint64_t damage_seed = derive_seed(s.seed, r, 3);

      if (s.level == PruneLevel::parameter) {
        if (fresh) {
          fixed_param = compute_damage(*damage_method, model, damage_batch, damage_seed, options);
          if (observer) observer(round, *fixed_param);
        }
        model = prune_parameters(std::move(model), *fixed_param, s.fraction, s.scope);
      } else if (s.method == PruneMethod::merge) {
        for (Index l = 0; l < model.hidden_count(); ++l) {
          const Index width = model.layers[l].out_width();
          const Index count = neurons_to_remove(width, s.fraction);
          if (count >= width) throw SpecError("merging would empty hidden layer " + std::to_string(l));
          model = merge_neurons(std::move(model), l, count, s.merge_outgoing);
        }
      } else {
        NeuronDamageReport report;
        if (fresh) {
          if (s.method == PruneMethod::dropout_regression) {
            DropoutRegressionConfig dc = s.dropout;
            dc.seed = derive_seed(s.seed, r, 4);
            report = damage_dropout_regression(model, damage_batch, dc);
          } else {
            const DamageReport pr = compute_damage(*damage_method, model, damage_batch, damage_seed, options);
            if (observer) observer(round, pr);
            report = aggregate_to_neurons(pr, model, s.include_outgoing);
          }
          fixed_neuron = report;
          for (auto& ids : original_ids) std::iota(ids.begin(), ids.end(), Index{0});
        } else {
          report = detail::select_neurons(*fixed_neuron, original_ids);
        }
        const auto before = model.hidden_widths();
        model = prune_neurons(std::move(model), report, s.fraction, s.scope, global);
        // Keep the ids of survivors so a reused report can still be indexed.
        const auto removed_any = model.hidden_widths() != before;
        if (removed_any && !s.recompute_damage) {
          for (Index l = 0; l < model.hidden_count(); ++l) {
            const auto& d = report.layers[l];
            const Index keep = model.layers[l].out_width();
            std::vector<Index> order(static_cast<std::size_t>(d.size()));
            std::iota(order.begin(), order.end(), Index{0});
            auto removed = detail::lowest(d, order, d.size() - keep);
            std::sort(removed.begin(), removed.end());
            std::vector<Index> survivors;
            for (Index i = 0; i < d.size(); ++i)
              if (!std::binary_search(removed.begin(), removed.end(), i)) survivors.push_back(original_ids[l][i]);
            original_ids[l] = std::move(survivors);
          }
        }
      }

      if (s.finetune.epochs > 0) {
        const Index n = s.finetune.sample_count > 0 ? std::min(s.finetune.sample_count, train_set.size()) : train_set.size();
        const Batch<Scalar> ft = resample(train_set, n, derive_seed(s.seed, r, 2)).template batch<Scalar>();
        TrainConfig tc;
        tc.epochs = s.finetune.epochs;
        tc.batch_size = s.finetune.batch_size;
        tc.learning_rate = s.finetune.learning_rate;
        tc.seed = derive_seed(s.seed, r, 5);
        model = train(std::move(model), ft, tc);
      }
      trace.records.push_back(detail::record_round(model, round, eval, s));
    }
  } catch (const DivergenceError& e) {
    trace.error = e.what();
  } catch (const NumericalError& e) {
    trace.error = e.what();
  }
  return trace;
}

}  // namespace prunekit
