#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prunekit/experiment.hpp"

namespace prunekit {

struct DatasetSection {
  enum class Kind { synth, csv } kind = Kind::synth;
  SynthConfig synth;
  std::string train_path;
  std::string test_path;
};

struct TrainSection {
  int epochs = 10;
  Index batch_size = 128;
  double learning_rate = 0.01;
  std::uint64_t seed = 0;
};

struct ScratchRun {
  ScratchMode mode = ScratchMode::fixed_neuron_fraction;
  double amount = 0.5;
  // from_neuron_report only
  DamageMethod method = DamageMethod::obd_sd;
  Index damage_sample_count = 1024;
  Index layer_floor = 1;
  std::optional<double> lambda;
  std::optional<int> epochs;  // defaults to the base training epochs
};

struct RunConfig {
  enum class Kind { prune, scratch } kind = Kind::prune;
  std::string name;
  PruneSchedule schedule;  // kind == prune
  ScratchRun scratch;      // kind == scratch
  std::vector<std::uint64_t> seeds{0};
};

struct ExperimentConfig {
  DatasetSection dataset;
  ModelSpec model;
  TrainSection train;
  std::vector<RunConfig> runs;
  std::string output = "prunekit_out";
  Precision precision = Precision::f32;
  double target_fpr = 0.001;
  int threads = 1;

  const RunConfig* find_run(const std::string& name) const;
};

// Parses the JSON text of a configuration file. Errors are ConfigError with
// the offending field path, e.g. "runs[1].fraction: must be in (0, 1)".
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

}  // namespace prunekit
