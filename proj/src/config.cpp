#include "prunekit/config.hpp"

#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace prunekit {
namespace {

using nlohmann::json;

// A JSON object plus its path, with typed accessors that reject unknown keys.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("must be an object");
  }

  [[noreturn]] void fail(const std::string& what) const { throw ConfigError((path_.empty() ? "<root>" : path_) + ": " + what); }
  std::string path() const { return path_.empty() ? "<root>" : path_; }
  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) const {
    used_.insert(key);
    return j_.contains(key);
  }

  const json& raw(const std::string& key) const {
    used_.insert(key);
    return j_.at(key);
  }

  Section object(const std::string& key) const { return Section(raw(key), at(key)); }

  double number(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_number()) throw ConfigError(at(key) + ": must be a number");
    return v.get<double>();
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) const {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_number_integer()) throw ConfigError(at(key) + ": must be an integer");
    return v.get<std::int64_t>();
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_number_unsigned()) throw ConfigError(at(key) + ": must be a non-negative integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_boolean()) throw ConfigError(at(key) + ": must be true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_string()) throw ConfigError(at(key) + ": must be a string");
    return v.get<std::string>();
  }

  // Runs `parse` on a string field and reports its exceptions under the field path.
  template <typename T, typename Parse>
  T choice(const std::string& key, T fallback, Parse parse) const {
    if (!has(key)) return fallback;
    const std::string s = string(key, "");
    try {
      return parse(s);
    } catch (const SpecError& e) {
      throw ConfigError(at(key) + ": " + e.what());
    }
  }

  void reject_unknown() const {
    for (const auto& [key, value] : j_.items())
      if (!used_.count(key)) throw ConfigError(at(key) + ": unknown field");
  }

 private:
  const json& j_;
  std::string path_;
  mutable std::set<std::string> used_;
};

template <typename Fn>
void wrap(const std::string& path, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const SpecError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

LossKind parse_loss(const std::string& s) {
  if (s == "binary_cross_entropy") return LossKind::binary_cross_entropy;
  if (s == "squared_error") return LossKind::squared_error;
  throw SpecError("unknown loss '" + s + "'");
}

ScratchMode parse_scratch_mode(const std::string& s) {
  if (s == "fixed_neuron_fraction") return ScratchMode::fixed_neuron_fraction;
  if (s == "fixed_connection_fraction") return ScratchMode::fixed_connection_fraction;
  if (s == "from_neuron_report") return ScratchMode::from_neuron_report;
  throw SpecError("unknown scratch mode '" + s +
                  "' (expected fixed_neuron_fraction, fixed_connection_fraction or from_neuron_report)");
}

MergeOutgoing parse_merge_outgoing(const std::string& s) {
  if (s == "sum") return MergeOutgoing::sum;
  if (s == "drop") return MergeOutgoing::drop;
  throw SpecError("unknown merge_outgoing '" + s + "' (expected sum or drop)");
}

DatasetSection parse_dataset(const Section& s) {
  DatasetSection d;
  const std::string type = s.string("type", "synth");
  if (type == "synth") {
    SynthConfig& c = d.synth;
    c.n_train = s.integer("n_train", c.n_train);
    c.n_test = s.integer("n_test", c.n_test);
    c.feature_dim = s.integer("feature_dim", c.feature_dim);
    c.pos_balance_train = s.number("pos_balance_train", c.pos_balance_train);
    c.pos_balance_test = s.number("pos_balance_test", c.pos_balance_test);
    c.difficulty = s.number("difficulty", c.difficulty);
    c.clusters = s.integer("clusters", c.clusters);
    c.anchor_spread = s.number("anchor_spread", c.anchor_spread);
    c.seed = s.unsigned_integer("seed", c.seed);
    wrap(s.path(), [&] { c.validate(); });
  } else if (type == "csv") {
    d.kind = DatasetSection::Kind::csv;
    if (!s.has("train") || !s.has("test")) s.fail("csv datasets need 'train' and 'test' paths");
    d.train_path = s.string("train", "");
    d.test_path = s.string("test", "");
    if (d.train_path == d.test_path) s.fail("train and test must be distinct files");
  } else {
    throw ConfigError(s.at("type") + ": expected synth or csv");
  }
  s.reject_unknown();
  return d;
}

ModelSpec parse_model(const Section& s) {
  ModelSpec spec;
  if (s.has("hidden")) {
    const json& arr = s.raw("hidden");
    if (!arr.is_array() || arr.empty()) throw ConfigError(s.at("hidden") + ": must be a non-empty array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const Section h(arr[i], s.at("hidden") + "[" + std::to_string(i) + "]");
      HiddenLayerSpec layer;
      layer.width = static_cast<int>(h.integer("width", 0));
      layer.activation = h.choice("activation", Activation::elu, [](const std::string& v) { return parse_activation(v); });
      layer.has_batchnorm = h.boolean("batchnorm", false);
      layer.dropout_rate = h.number("dropout", 0.0);
      h.reject_unknown();
      spec.hidden.push_back(layer);
    }
    if (s.has("scale")) s.fail("give either 'hidden' or 'scale', not both");
  } else {
    spec = ModelSpec::desk_default(1, s.number("scale", 0.125), s.boolean("batchnorm", true), s.number("dropout", 0.05));
    const Activation a = s.choice("activation", Activation::elu, [](const std::string& v) { return parse_activation(v); });
    for (auto& h : spec.hidden) h.activation = a;
  }
  spec.output.activation =
      s.choice("output_activation", spec.output.activation, [](const std::string& v) { return parse_activation(v); });
  spec.loss = s.choice("loss", spec.loss, parse_loss);
  s.reject_unknown();
  return spec;
}

TrainSection parse_train(const Section& s) {
  TrainSection t;
  t.epochs = static_cast<int>(s.integer("epochs", t.epochs));
  t.batch_size = s.integer("batch_size", t.batch_size);
  t.learning_rate = s.number("learning_rate", t.learning_rate);
  t.seed = s.unsigned_integer("seed", t.seed);
  if (t.epochs < 0) throw ConfigError(s.at("epochs") + ": must be >= 0");
  if (t.batch_size < 1) throw ConfigError(s.at("batch_size") + ": must be >= 1");
  if (!(t.learning_rate > 0.0)) throw ConfigError(s.at("learning_rate") + ": must be > 0");
  s.reject_unknown();
  return t;
}

std::vector<std::uint64_t> parse_seeds(const Section& s) {
  if (!s.has("seeds")) return {0};
  const json& arr = s.raw("seeds");
  if (!arr.is_array() || arr.empty()) throw ConfigError(s.at("seeds") + ": must be a non-empty array");
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number_unsigned())
      throw ConfigError(s.at("seeds") + "[" + std::to_string(i) + "]: must be a non-negative integer");
    seeds.push_back(arr[i].get<std::uint64_t>());
  }
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError(s.at("seeds") + ": duplicate seed");
  return seeds;
}

RunConfig parse_run(const Section& s, const ExperimentConfig& cfg) {
  RunConfig run;
  run.name = s.string("name", "");
  if (run.name.empty()) throw ConfigError(s.at("name") + ": required");
  for (char ch : run.name)
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-' || ch == '.'))
      throw ConfigError(s.at("name") + ": only letters, digits, '_', '-' and '.' are allowed");
  const std::string kind = s.string("kind", "prune");
  run.seeds = parse_seeds(s);

  if (kind == "prune") {
    PruneSchedule& p = run.schedule;
    p.level = s.choice("level", p.level, [](const std::string& v) { return parse_prune_level(v); });
    p.method = s.choice("method", p.method, [](const std::string& v) { return parse_prune_method(v); });
    p.fraction = s.number("fraction", p.fraction);
    p.rounds = static_cast<int>(s.integer("rounds", p.rounds));
    p.scope = s.choice("scope", p.scope, [](const std::string& v) { return parse_prune_scope(v); });
    p.layer_floor = s.integer("layer_floor", p.layer_floor);
    if (s.has("lambda")) p.lambda = s.number("lambda", 0.0);
    p.recompute_damage = s.boolean("recompute_damage", p.recompute_damage);
    p.damage_sample_count = s.integer("damage_sample_count", p.damage_sample_count);
    p.include_outgoing = s.boolean("include_outgoing", p.include_outgoing);
    p.merge_outgoing = s.choice("merge_outgoing", p.merge_outgoing, parse_merge_outgoing);
    if (s.has("finetune")) {
      const Section f = s.object("finetune");
      p.finetune.epochs = static_cast<int>(f.integer("epochs", p.finetune.epochs));
      p.finetune.sample_count = f.integer("sample_count", p.finetune.sample_count);
      p.finetune.batch_size = f.integer("batch_size", p.finetune.batch_size);
      p.finetune.learning_rate = f.number("learning_rate", p.finetune.learning_rate);
      f.reject_unknown();
    }
    if (s.has("dropout")) {
      const Section d = s.object("dropout");
      p.dropout.rounds = d.integer("rounds", p.dropout.rounds);
      p.dropout.dropout_rate = d.number("rate", p.dropout.dropout_rate);
      p.dropout.ridge_lambda = d.number("ridge_lambda", p.dropout.ridge_lambda);
      p.dropout.exhaustive = d.boolean("exhaustive", p.dropout.exhaustive);
      d.reject_unknown();
      if (!(p.dropout.dropout_rate > 0.0 && p.dropout.dropout_rate < 1.0))
        throw ConfigError(d.at("rate") + ": must be in (0, 1)");
      if (p.dropout.ridge_lambda < 0.0) throw ConfigError(d.at("ridge_lambda") + ": must be >= 0");
      if (p.dropout.rounds < 0) throw ConfigError(d.at("rounds") + ": must be >= 0");
    }
    p.precision = cfg.precision;
    p.target_fpr = cfg.target_fpr;
    wrap(s.path(), [&] { p.validate(); });
  } else if (kind == "scratch") {
    run.kind = RunConfig::Kind::scratch;
    ScratchRun& r = run.scratch;
    r.mode = s.choice("mode", r.mode, parse_scratch_mode);
    r.amount = s.number("amount", r.amount);
    r.method = s.choice("method", r.method, [](const std::string& v) { return parse_damage_method(v); });
    r.damage_sample_count = s.integer("damage_sample_count", r.damage_sample_count);
    r.layer_floor = s.integer("layer_floor", r.layer_floor);
    if (s.has("lambda")) r.lambda = s.number("lambda", 0.0);
    if (s.has("epochs")) r.epochs = static_cast<int>(s.integer("epochs", 0));
    if (!(r.amount >= 0.0 && r.amount < 1.0)) throw ConfigError(s.at("amount") + ": must be in [0, 1)");
    if (r.layer_floor < 1) throw ConfigError(s.at("layer_floor") + ": must be >= 1");
    if (r.damage_sample_count < 0) throw ConfigError(s.at("damage_sample_count") + ": must be >= 0");
    if (r.epochs && *r.epochs < 0) throw ConfigError(s.at("epochs") + ": must be >= 0");
  } else {
    throw ConfigError(s.at("kind") + ": expected prune or scratch");
  }
  s.reject_unknown();
  return run;
}

}  // namespace

const RunConfig* ExperimentConfig::find_run(const std::string& name) const {
  for (const auto& r : runs)
    if (r.name == name) return &r;
  return nullptr;
}

ExperimentConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("<root>: invalid JSON: ") + e.what());
  }
  const Section s(root, "");
  ExperimentConfig cfg;
  cfg.output = s.string("output", cfg.output);
  cfg.precision = s.choice("precision", cfg.precision, [](const std::string& v) { return parse_precision(v); });
  cfg.target_fpr = s.number("target_fpr", cfg.target_fpr);
  if (!(cfg.target_fpr > 0.0 && cfg.target_fpr < 1.0)) throw ConfigError("target_fpr: must be in (0, 1)");
  cfg.threads = static_cast<int>(s.integer("threads", cfg.threads));
  if (cfg.threads < 1) throw ConfigError("threads: must be >= 1");
  if (s.has("dataset")) cfg.dataset = parse_dataset(s.object("dataset"));
  if (s.has("model")) cfg.model = parse_model(s.object("model"));
  else cfg.model = ModelSpec::desk_default(1);
  if (cfg.dataset.kind == DatasetSection::Kind::synth) {
    cfg.model.input_dim = static_cast<int>(cfg.dataset.synth.feature_dim);
    wrap("model", [&] { cfg.model.validate(); });
  }
  if (s.has("train")) cfg.train = parse_train(s.object("train"));
  if (s.has("runs")) {
    const json& arr = s.raw("runs");
    if (!arr.is_array()) throw ConfigError("runs: must be an array");
    std::set<std::string> names;
    for (std::size_t i = 0; i < arr.size(); ++i) {
      RunConfig run = parse_run(Section(arr[i], "runs[" + std::to_string(i) + "]"), cfg);
      if (!names.insert(run.name).second)
        throw ConfigError("runs[" + std::to_string(i) + "].name: duplicate run name '" + run.name + "'");
      cfg.runs.push_back(std::move(run));
    }
  }
  s.reject_unknown();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

}  // namespace prunekit
