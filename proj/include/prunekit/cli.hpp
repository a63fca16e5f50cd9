#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "prunekit/config.hpp"

namespace prunekit {

// Command-line overrides applied on top of the config file.
struct CommandOptions {
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;  // replaces the base seed and every run's seed list
  std::optional<Precision> precision;
  std::optional<int> threads;
  std::string model_path;  // quantize input; defaults to <out>/base.pkm
};

// Output layout under the output directory:
//   base.pkm, base_metrics.csv                  train
//   scratch/<run>/seed_<s>.pkm, scratch_metrics.csv
//   traces/<run>/seed_<s>.csv                   prune
//   vshape/<run>/seed_<s>.csv, damage/<run>/seed_<s>_round_1.csv
//   <model>_f16.pkm, quantize.csv               quantize
//   report/*.csv                                report
struct OutputPaths {
  std::string root;

  std::string base_model() const;
  std::string base_metrics() const;
  std::string scratch_model(const std::string& run, std::uint64_t seed) const;
  std::string scratch_metrics() const;
  std::string trace(const std::string& run, std::uint64_t seed) const;
  std::string trace_error(const std::string& run, std::uint64_t seed) const;
  std::string vshape(const std::string& run, std::uint64_t seed) const;
  std::string damage(const std::string& run, std::uint64_t seed) const;
  std::string quantize_table() const;
  std::string report_dir() const;
};

// Applies overrides (flags first, then PRUNEKIT_OUT / PRUNEKIT_THREADS) and
// returns the effective configuration.
ExperimentConfig resolve(ExperimentConfig config, const CommandOptions& options);

// Each command returns a process exit code: 0 success, 2 when a run diverged.
// Configuration problems throw ConfigError/SpecError, other failures throw.
int cmd_train(const ExperimentConfig& config, std::ostream& log);
int cmd_prune(const ExperimentConfig& config, std::ostream& log);
int cmd_quantize(const ExperimentConfig& config, const std::string& model_path, std::ostream& log);
int cmd_report(const std::string& out_dir, std::ostream& log);

}  // namespace prunekit
