#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "prunekit/cli.hpp"

namespace {

enum ExitCode { kOk = 0, kConfigError = 1, kRuntimeError = 2 };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prunekit: prune, quantize and size neural network classifiers"};
  app.require_subcommand(1);

  std::string config_path;
  prunekit::CommandOptions options;
  std::string out_dir, precision, model_path;
  std::uint64_t seed = 0;
  int threads = 0;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* c = cmd->add_option("--config", config_path, "experiment config (JSON)");
    if (needs_config) c->required();
    cmd->add_option("--out", out_dir, "output directory (overrides config and PRUNEKIT_OUT)");
    cmd->add_option("--seed", seed, "replace the base seed and every run's seed list");
    cmd->add_option("--precision", precision, "storage precision: f32 or f16");
    cmd->add_option("--threads", threads, "worker threads (overrides PRUNEKIT_THREADS)");
  };
  auto* train = app.add_subcommand("train", "train the base model and any scratch runs");
  add_common(train, true);
  auto* prune = app.add_subcommand("prune", "run every prune schedule against the trained base model");
  add_common(prune, true);
  auto* quantize = app.add_subcommand("quantize", "store a model at f16 and compare metrics");
  add_common(quantize, true);
  quantize->add_option("--model", model_path, "model file (default <out>/base.pkm)");
  auto* report = app.add_subcommand("report", "aggregate traces into plot-ready tables");
  add_common(report, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    auto* cmd = app.get_subcommands().front();
    if (cmd->count("--out")) options.out_dir = out_dir;
    if (cmd->count("--seed")) options.seed = seed;
    if (cmd->count("--threads")) options.threads = threads;
    if (cmd->count("--precision")) options.precision = prunekit::parse_precision(precision);

    prunekit::ExperimentConfig config;
    if (!config_path.empty()) config = prunekit::load_config(config_path);
    config = prunekit::resolve(std::move(config), options);

    if (cmd == train) return prunekit::cmd_train(config, std::cerr);
    if (cmd == prune) return prunekit::cmd_prune(config, std::cerr);
    if (cmd == quantize) return prunekit::cmd_quantize(config, model_path, std::cerr);
    return prunekit::cmd_report(config.output, std::cerr);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}
