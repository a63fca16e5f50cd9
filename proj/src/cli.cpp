#include "prunekit/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>

#include "prunekit/parallel.hpp"

namespace prunekit {
namespace fs = std::filesystem;

namespace {

std::string seed_stem(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

std::string join_widths(const std::vector<int>& widths) {
  std::string s;
  for (std::size_t i = 0; i < widths.size(); ++i) s += (i ? ";" : "") + std::to_string(widths[i]);
  return s;
}

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

std::ofstream open_out(const std::string& path) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  auto out = open_out(path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Data {
  Dataset train;
  Dataset test;
};

Data load_data(const ExperimentConfig& cfg, std::ostream& log) {
  Data d;
  if (cfg.dataset.kind == DatasetSection::Kind::synth) {
    auto [tr, te] = synth_generate(cfg.dataset.synth);
    d.train = std::move(tr);
    d.test = std::move(te);
  } else {
    d.train = load_csv(cfg.dataset.train_path, DatasetRole::train);
    d.test = load_csv(cfg.dataset.test_path, DatasetRole::test);
    if (d.train.dim() != d.test.dim()) throw FormatError("train and test files have different feature counts");
  }
  const double negatives = (1.0 - d.test.positive_fraction()) * static_cast<double>(d.test.size());
  if (negatives < 1000.0)
    log << "warning: test set has only " << static_cast<long long>(negatives)
        << " negatives; TPR at the target FPR is unreliable\n";
  return d;
}

ModelSpec effective_spec(const ExperimentConfig& cfg, const Dataset& train) {
  ModelSpec spec = cfg.model;
  spec.input_dim = static_cast<int>(train.dim());
  try {
    spec.validate();
  } catch (const SpecError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  return spec;
}

Model<float> load_model(const std::string& path, const std::string& hint) {
  if (!fs::exists(path)) throw std::runtime_error("no model at " + path + "; " + hint);
  const auto bytes = read_bytes(path);
  return deserialize<float>(bytes);
}

PruneLevel scratch_level(ScratchMode mode) {
  return mode == ScratchMode::fixed_connection_fraction ? PruneLevel::parameter : PruneLevel::neuron;
}

std::string_view to_string(ScratchMode mode) {
  switch (mode) {
    case ScratchMode::fixed_neuron_fraction: return "fixed_neuron_fraction";
    case ScratchMode::fixed_connection_fraction: return "fixed_connection_fraction";
    case ScratchMode::from_neuron_report: return "from_neuron_report";
  }
  return "?";
}

struct Pair {
  const RunConfig* run;
  std::uint64_t seed;
};

std::vector<Pair> pairs_of(const ExperimentConfig& cfg, RunConfig::Kind kind) {
  std::vector<Pair> out;
  for (const auto& r : cfg.runs)
    if (r.kind == kind)
      for (auto s : r.seeds) out.push_back({&r, s});
  return out;
}

// --- report helpers ---------------------------------------------------------

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<std::vector<std::string>> read_csv(const std::string& path, const std::string& expected_header) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != expected_header)
    throw FormatError(path + ": unexpected header (expected '" + expected_header + "')");
  std::vector<std::vector<std::string>> rows;
  std::size_t line_no = 1;
  const std::size_t width = split_csv(expected_header).size();
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() != width) throw FormatError(path + ":" + std::to_string(line_no) + ": wrong field count");
    rows.push_back(std::move(f));
  }
  return rows;
}

double to_double(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

struct TracePoint {
  int round = 0;
  std::string params, neurons;
  double raw = 0, zip = 0, auc = 0, tpr = 0, loss = 0;
};

struct LoadedTrace {
  std::string run, method, level;
  std::uint64_t seed = 0;
  std::vector<TracePoint> points;
};

struct Stat {
  double mean = 0, min = 0, max = 0;
};

Stat stat_of(const std::vector<double>& v) {
  Stat s{0.0, v.front(), v.front()};
  for (double x : v) {
    s.mean += x;
    s.min = std::min(s.min, x);
    s.max = std::max(s.max, x);
  }
  s.mean /= static_cast<double>(v.size());
  return s;
}

struct CurvePoint {
  int round;
  std::size_t n;
  Stat pct, auc, tpr;
};

// Linear interpolation of a mean curve at pct_zip_reduction x.
double interpolate(const std::vector<CurvePoint>& curve, double x, bool tpr, bool& in_range) {
  in_range = false;
  for (std::size_t i = 0; i + 1 < curve.size(); ++i) {
    const double x0 = curve[i].pct.mean, x1 = curve[i + 1].pct.mean;
    if (x >= std::min(x0, x1) && x <= std::max(x0, x1)) {
      const double y0 = tpr ? curve[i].tpr.mean : curve[i].auc.mean;
      const double y1 = tpr ? curve[i + 1].tpr.mean : curve[i + 1].auc.mean;
      in_range = true;
      if (x1 == x0) return y0;
      return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
    }
  }
  return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

std::string OutputPaths::base_model() const { return (fs::path(root) / "base.pkm").string(); }
std::string OutputPaths::base_metrics() const { return (fs::path(root) / "base_metrics.csv").string(); }
std::string OutputPaths::scratch_model(const std::string& run, std::uint64_t seed) const {
  return (fs::path(root) / "scratch" / run / (seed_stem(seed) + ".pkm")).string();
}
std::string OutputPaths::scratch_metrics() const { return (fs::path(root) / "scratch_metrics.csv").string(); }
std::string OutputPaths::trace(const std::string& run, std::uint64_t seed) const {
  return (fs::path(root) / "traces" / run / (seed_stem(seed) + ".csv")).string();
}
std::string OutputPaths::trace_error(const std::string& run, std::uint64_t seed) const {
  return (fs::path(root) / "traces" / run / (seed_stem(seed) + ".error.txt")).string();
}
std::string OutputPaths::vshape(const std::string& run, std::uint64_t seed) const {
  return (fs::path(root) / "vshape" / run / (seed_stem(seed) + ".csv")).string();
}
std::string OutputPaths::damage(const std::string& run, std::uint64_t seed) const {
  return (fs::path(root) / "damage" / run / (seed_stem(seed) + "_round_1.csv")).string();
}
std::string OutputPaths::quantize_table() const { return (fs::path(root) / "quantize.csv").string(); }
std::string OutputPaths::report_dir() const { return (fs::path(root) / "report").string(); }

ExperimentConfig resolve(ExperimentConfig config, const CommandOptions& options) {
  if (options.out_dir) {
    config.output = *options.out_dir;
  } else if (const char* env = std::getenv("PRUNEKIT_OUT"); env && *env) {
    config.output = env;
  }
  if (options.threads) {
    if (*options.threads < 1) throw ConfigError("--threads: must be >= 1");
    config.threads = *options.threads;
  } else if (std::getenv("PRUNEKIT_THREADS")) {
    config.threads = default_thread_count();
  }
  if (options.precision) {
    config.precision = *options.precision;
    for (auto& r : config.runs) r.schedule.precision = *options.precision;
  }
  if (options.seed) {
    config.train.seed = *options.seed;
    for (auto& r : config.runs) r.seeds = {*options.seed};
  }
  return config;
}

int cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  const OutputPaths out{cfg.output};
  const Data data = load_data(cfg, log);
  const ModelSpec spec = effective_spec(cfg, data.train);
  const Batch<float> train_batch = data.train.batch<float>();
  const Batch<float> test_batch = data.test.batch<float>();

  TrainConfig tc;
  tc.epochs = cfg.train.epochs;
  tc.batch_size = cfg.train.batch_size;
  tc.learning_rate = cfg.train.learning_rate;
  tc.seed = derive_seed(cfg.train.seed, 0, 8);
  const Model<float> base = train(init_random<float>(spec, derive_seed(cfg.train.seed, 0, 6)), train_batch, tc);
  write_bytes(out.base_model(), serialize(base, cfg.precision));
  const SizeReport base_sizes = measure_sizes(base, cfg.precision);
  const MetricsRecord base_metrics = evaluate(base, test_batch, cfg.target_fpr);
  {
    auto f = open_out(out.base_metrics());
    f << "model,precision,params,neurons_per_layer,raw_bytes,zip_bytes,auc,tpr_at_fpr,loss,accuracy,n\n";
    f << "base," << to_string(cfg.precision) << ',' << base.parameter_count() << ','
      << join_widths(base.hidden_widths()) << ',' << base_sizes.raw_bytes << ',' << base_sizes.zip_bytes << ','
      << fmt(base_metrics.auc) << ',' << fmt(base_metrics.tpr_at_fpr) << ',' << fmt(base_metrics.mean_loss) << ','
      << fmt(base_metrics.accuracy) << ',' << base_metrics.n << '\n';
  }
  log << "base: widths " << join_widths(base.hidden_widths()) << ", auc " << base_metrics.auc << ", tpr@"
      << cfg.target_fpr << " " << base_metrics.tpr_at_fpr << ", zip " << base_sizes.zip_bytes << " bytes\n";

  const auto pairs = pairs_of(cfg, RunConfig::Kind::scratch);
  std::vector<std::string> rows(pairs.size());
  parallel_for(static_cast<Index>(pairs.size()), cfg.threads, [&](Index i) {
    const RunConfig& run = *pairs[i].run;
    const std::uint64_t seed = pairs[i].seed;
    const ScratchRun& sr = run.scratch;
    ScratchArchitecture arch;
    switch (sr.mode) {
      case ScratchMode::fixed_neuron_fraction: arch = scratch_fixed_neuron_fraction(spec, sr.amount); break;
      case ScratchMode::fixed_connection_fraction:
        arch = scratch_fixed_connection_fraction(spec, sr.amount, derive_seed(seed, 0, 9));
        break;
      case ScratchMode::from_neuron_report: {
        const Index n = sr.damage_sample_count > 0 ? std::min(sr.damage_sample_count, data.train.size())
                                                   : data.train.size();
        const Batch<float> db = resample(data.train, n, derive_seed(seed, 0, 1)).batch<float>();
        const DamageReport report = compute_damage(sr.method, base, db, derive_seed(seed, 0, 3));
        GlobalSelectionOptions g;
        g.layer_floor = sr.layer_floor;
        g.lambda = sr.lambda;
        arch = scratch_from_neuron_report(spec, aggregate_to_neurons(report, base), sr.amount, g);
        break;
      }
    }
    TrainConfig stc = tc;
    stc.epochs = sr.epochs.value_or(cfg.train.epochs);
    stc.seed = derive_seed(seed, 0, 8);
    const Model<float> m = train(instantiate<float>(arch, derive_seed(seed, 0, 6)), train_batch, stc);
    write_bytes(out.scratch_model(run.name, seed), serialize(m, cfg.precision));
    const SizeReport sizes = measure_sizes(m, cfg.precision);
    const MetricsRecord mr = evaluate(m, test_batch, cfg.target_fpr);
    std::ostringstream row;
    row << run.name << ',' << to_string(sr.mode) << ',' << to_string(scratch_level(sr.mode)) << ',' << fmt(sr.amount)
        << ',' << seed << ',' << join_widths(m.hidden_widths()) << ','
        << m.parameter_count() - (m.prunable_parameter_count() - m.unmasked_prunable_count()) << ','
        << sizes.raw_bytes << ',' << sizes.zip_bytes << ',' << fmt(mr.auc) << ',' << fmt(mr.tpr_at_fpr) << ','
        << fmt(mr.mean_loss) << '\n';
    rows[i] = row.str();
  });
  if (!pairs.empty()) {
    auto f = open_out(out.scratch_metrics());
    f << "run,mode,level,amount,seed,neurons_per_layer,params,raw_bytes,zip_bytes,auc,tpr_at_fpr,loss\n";
    for (const auto& r : rows) f << r;
    log << "scratch: " << pairs.size() << " model(s) trained\n";
  }
  return 0;
}

int cmd_prune(const ExperimentConfig& cfg, std::ostream& log) {
  const OutputPaths out{cfg.output};
  const Model<float> base =
      load_model(out.base_model(), "run `prunekit train --config <file>` with the same output directory first");
  const Data data = load_data(cfg, log);
  if (data.train.dim() != base.input_dim)
    throw DimensionError("base model expects " + std::to_string(base.input_dim) + " features, dataset has " +
                         std::to_string(data.train.dim()));

  const auto pairs = pairs_of(cfg, RunConfig::Kind::prune);
  std::vector<std::string> messages(pairs.size());
  std::vector<bool> failed(pairs.size(), false);
  parallel_for(static_cast<Index>(pairs.size()), cfg.threads, [&](Index i) {
    const RunConfig& run = *pairs[i].run;
    const std::uint64_t seed = pairs[i].seed;
    PruneSchedule s = run.schedule;
    s.seed = seed;
    s.threads = pairs.size() == 1 ? cfg.threads : 1;
    const bool diagnose = s.method == PruneMethod::obd || s.method == PruneMethod::obd_sd;
    std::ostringstream vshape;
    vshape.precision(17);
    vshape << "round,n_params,corr_raw,corr_abs,fraction_nonneg_mean,degenerate\n";
    DamageObserver observer;
    if (diagnose) {
      observer = [&](int round, const DamageReport& report) {
        const VShapeStats v = v_shape_stats(report);
        vshape << round << ',' << v.n_params << ',' << v.corr_raw << ',' << v.corr_abs << ',' << v.fraction_nonneg_mean
               << ',' << (v.degenerate ? 1 : 0) << '\n';
        if (round == 1) {
          auto f = open_out(out.damage(run.name, seed));
          write_damage_csv(f, report);
        }
      };
    }
    const PruneTrace trace = prune_finetune_loop(base, s, data.train, data.test, observer);
    {
      auto f = open_out(out.trace(run.name, seed));
      write_trace_csv(f, trace);
    }
    if (diagnose) open_out(out.vshape(run.name, seed)) << vshape.str();
    std::ostringstream msg;
    msg << run.name << " seed " << seed << ": " << trace.records.size() - 1 << " round(s)";
    if (trace.error) {
      open_out(out.trace_error(run.name, seed)) << *trace.error << '\n';
      msg << ", stopped: " << *trace.error;
      failed[i] = true;
    } else {
      const auto& last = trace.records.back();
      msg << ", final auc " << last.metrics.auc << ", zip " << last.sizes.zip_bytes << " bytes";
    }
    messages[i] = msg.str();
  });
  for (const auto& m : messages) log << m << '\n';
  return std::find(failed.begin(), failed.end(), true) != failed.end() ? 2 : 0;
}

int cmd_quantize(const ExperimentConfig& cfg, const std::string& model_path, std::ostream& log) {
  const OutputPaths out{cfg.output};
  const std::string in_path = model_path.empty() ? out.base_model() : model_path;
  const Model<float> model = load_model(in_path, "train a model first or pass --model");
  const Data data = load_data(cfg, log);
  if (data.test.dim() != model.input_dim) throw DimensionError("model input does not match the dataset");
  const Batch<float> test = data.test.batch<float>();

  QuantizationReport qr;
  const auto f16_bytes = serialize(model, Precision::f16, &qr);
  const std::string out_path = (fs::path(cfg.output) / (fs::path(in_path).stem().string() + "_f16.pkm")).string();
  write_bytes(out_path, f16_bytes);

  const MetricsRecord m32 = evaluate(model, test, cfg.target_fpr);
  const MetricsRecord m16 = evaluate(deserialize<float>(f16_bytes), test, cfg.target_fpr);
  const SizeReport s32 = measure_sizes(model, Precision::f32);
  const SizeReport s16 = measure_sizes(model, Precision::f16);
  auto f = open_out(out.quantize_table());
  f << "model,precision,raw_bytes,zip_bytes,payload_bytes,param_count,overflow_count,auc,tpr_at_fpr,loss,"
       "delta_auc,delta_tpr_at_fpr,delta_loss\n";
  const std::string name = fs::path(in_path).stem().string();
  for (const auto& [s, m] : {std::pair{s32, m32}, std::pair{s16, m16}})
    f << name << ',' << to_string(s.precision) << ',' << s.raw_bytes << ',' << s.zip_bytes << ',' << s.payload_bytes
      << ',' << s.param_count << ',' << s.overflow_count << ',' << fmt(m.auc) << ',' << fmt(m.tpr_at_fpr) << ','
      << fmt(m.mean_loss) << ',' << fmt(m.auc - m32.auc) << ',' << fmt(m.tpr_at_fpr - m32.tpr_at_fpr) << ','
      << fmt(m.mean_loss - m32.mean_loss) << '\n';
  if (qr.overflow_count > 0)
    log << "warning: " << qr.overflow_count << " parameter(s) overflowed binary16 and were stored as infinity\n";
  log << "f16 model written to " << out_path << ", payload " << s16.payload_bytes << " vs " << s32.payload_bytes
      << " bytes, auc delta " << m16.auc - m32.auc << '\n';
  return 0;
}

int cmd_report(const std::string& out_dir, std::ostream& log) {
  const OutputPaths out{out_dir};
  const std::string trace_header = "round,method,level,params,neurons_per_layer,raw_bytes,zip_bytes,auc,tpr_at_fpr,loss";
  const fs::path trace_root = fs::path(out_dir) / "traces";

  std::vector<LoadedTrace> traces;
  if (fs::is_directory(trace_root)) {
    std::vector<fs::path> run_dirs;
    for (const auto& e : fs::directory_iterator(trace_root))
      if (e.is_directory()) run_dirs.push_back(e.path());
    std::sort(run_dirs.begin(), run_dirs.end());
    for (const auto& dir : run_dirs) {
      std::vector<std::pair<std::uint64_t, fs::path>> files;
      for (const auto& e : fs::directory_iterator(dir)) {
        const std::string stem = e.path().stem().string();
        if (e.path().extension() != ".csv" || stem.rfind("seed_", 0) != 0) continue;
        files.emplace_back(std::stoull(stem.substr(5)), e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& [seed, path] : files) {
        LoadedTrace t;
        t.run = dir.filename().string();
        t.seed = seed;
        for (const auto& row : read_csv(path.string(), trace_header)) {
          t.method = row[1];
          t.level = row[2];
          t.points.push_back({std::stoi(row[0]), row[3], row[4], to_double(row[5]), to_double(row[6]),
                              to_double(row[7]), to_double(row[8]), to_double(row[9])});
        }
        if (t.points.empty() || t.points.front().round != 0)
          throw FormatError(path.string() + ": trace has no baseline row");
        traces.push_back(std::move(t));
      }
    }
  }
  if (traces.empty()) throw std::runtime_error("no traces under " + trace_root.string() + "; run `prunekit prune` first");

  const TracePoint& ref = traces.front().points.front();
  for (const auto& t : traces) {
    const TracePoint& b = t.points.front();
    if (b.raw != ref.raw || b.zip != ref.zip || b.auc != ref.auc || b.tpr != ref.tpr || b.loss != ref.loss)
      throw std::runtime_error("inconsistent baselines: trace " + t.run + "/" + seed_stem(t.seed) +
                               " does not start from the same base model as " + traces.front().run + "/" +
                               seed_stem(traces.front().seed));
  }
  auto pct = [&](double zip) { return 100.0 * (1.0 - zip / ref.zip); };
  auto pct_raw = [&](double raw) { return 100.0 * (1.0 - raw / ref.raw); };

  const fs::path rdir = out.report_dir();
  {
    auto f = open_out((rdir / "long.csv").string());
    f << "run,method,level,seed,round,params,neurons_per_layer,raw_bytes,zip_bytes,pct_raw_reduction,"
         "pct_zip_reduction,auc,tpr_at_fpr,loss\n";
    for (const auto& t : traces)
      for (const auto& p : t.points)
        f << t.run << ',' << t.method << ',' << t.level << ',' << t.seed << ',' << p.round << ',' << p.params << ','
          << p.neurons << ',' << static_cast<long long>(p.raw) << ',' << static_cast<long long>(p.zip) << ','
          << fmt(pct_raw(p.raw)) << ',' << fmt(pct(p.zip)) << ',' << fmt(p.auc) << ',' << fmt(p.tpr) << ','
          << fmt(p.loss) << '\n';
  }

  // Per run: mean/min/max across seeds at each round.
  struct RunCurve {
    std::string run, method, level;
    std::vector<CurvePoint> points;
  };
  std::vector<RunCurve> curves;
  for (std::size_t i = 0; i < traces.size();) {
    std::size_t j = i;
    while (j < traces.size() && traces[j].run == traces[i].run) ++j;
    RunCurve c{traces[i].run, traces[i].method, traces[i].level, {}};
    std::map<int, std::vector<const TracePoint*>> by_round;
    for (std::size_t k = i; k < j; ++k)
      for (const auto& p : traces[k].points) by_round[p.round].push_back(&p);
    for (const auto& [round, pts] : by_round) {
      std::vector<double> pc, au, tp;
      for (const auto* p : pts) {
        pc.push_back(pct(p->zip));
        au.push_back(p->auc);
        tp.push_back(p->tpr);
      }
      c.points.push_back({round, pts.size(), stat_of(pc), stat_of(au), stat_of(tp)});
    }
    curves.push_back(std::move(c));
    i = j;
  }
  {
    auto f = open_out((rdir / "summary.csv").string());
    f << "run,method,level,round,n_seeds,pct_zip_mean,pct_zip_min,pct_zip_max,auc_mean,auc_min,auc_max,tpr_mean,"
         "tpr_min,tpr_max\n";
    for (const auto& c : curves)
      for (const auto& p : c.points)
        f << c.run << ',' << c.method << ',' << c.level << ',' << p.round << ',' << p.n << ',' << fmt(p.pct.mean) << ','
          << fmt(p.pct.min) << ',' << fmt(p.pct.max) << ',' << fmt(p.auc.mean) << ',' << fmt(p.auc.min) << ','
          << fmt(p.auc.max) << ',' << fmt(p.tpr.mean) << ',' << fmt(p.tpr.min) << ',' << fmt(p.tpr.max) << '\n';
  }

  // Scratch models, grouped by run.
  struct ScratchPoint {
    std::string run, mode, level;
    std::size_t n;
    Stat pct, auc, tpr;
  };
  std::vector<ScratchPoint> scratch;
  if (fs::exists(out.scratch_metrics())) {
    const auto rows = read_csv(out.scratch_metrics(),
                               "run,mode,level,amount,seed,neurons_per_layer,params,raw_bytes,zip_bytes,auc,"
                               "tpr_at_fpr,loss");
    for (std::size_t i = 0; i < rows.size();) {
      std::size_t j = i;
      std::vector<double> pc, au, tp;
      while (j < rows.size() && rows[j][0] == rows[i][0]) {
        pc.push_back(pct(to_double(rows[j][8])));
        au.push_back(to_double(rows[j][9]));
        tp.push_back(to_double(rows[j][10]));
        ++j;
      }
      scratch.push_back({rows[i][0], rows[i][1], rows[i][2], j - i, stat_of(pc), stat_of(au), stat_of(tp)});
      i = j;
    }
  }

  for (const std::string level : {"parameter", "neuron"}) {
    for (const bool tpr : {false, true}) {
      auto f = open_out((rdir / ("figure_" + level + (tpr ? "_tpr.csv" : "_auc.csv"))).string());
      f << "series,kind,round,n_seeds,pct_zip_reduction,value_mean,value_min,value_max\n";
      for (const auto& c : curves) {
        if (c.level != level) continue;
        for (const auto& p : c.points) {
          const Stat& v = tpr ? p.tpr : p.auc;
          f << c.run << ",pruned," << p.round << ',' << p.n << ',' << fmt(p.pct.mean) << ',' << fmt(v.mean) << ','
            << fmt(v.min) << ',' << fmt(v.max) << '\n';
        }
      }
      for (const auto& s : scratch) {
        if (s.level != level) continue;
        const Stat& v = tpr ? s.tpr : s.auc;
        f << s.run << ",scratch,," << s.n << ',' << fmt(s.pct.mean) << ',' << fmt(v.mean) << ',' << fmt(v.min) << ','
          << fmt(v.max) << '\n';
      }
    }
  }

  {
    auto f = open_out((rdir / "scratch_vs_prune.csv").string());
    f << "level,scratch_run,prune_run,pct_zip_reduction,scratch_auc,pruned_auc,delta_auc,scratch_tpr,pruned_tpr,"
         "delta_tpr,in_range\n";
    for (const auto& s : scratch)
      for (const auto& c : curves) {
        if (c.level != s.level) continue;
        bool in_auc = false, in_tpr = false;
        const double pa = interpolate(c.points, s.pct.mean, false, in_auc);
        const double pt = interpolate(c.points, s.pct.mean, true, in_tpr);
        f << s.level << ',' << s.run << ',' << c.run << ',' << fmt(s.pct.mean) << ',' << fmt(s.auc.mean) << ','
          << fmt(pa) << ',' << fmt(s.auc.mean - pa) << ',' << fmt(s.tpr.mean) << ',' << fmt(pt) << ','
          << fmt(s.tpr.mean - pt) << ',' << (in_auc ? 1 : 0) << '\n';
      }
  }
  log << "report: " << traces.size() << " trace(s), " << scratch.size() << " scratch run(s) -> " << rdir.string()
      << '\n';
  return 0;
}

}  // namespace prunekit
