#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "prunekit/config.hpp"
#include "prunekit/experiment.hpp"

using namespace prunekit;

namespace {

struct Toy {
  Dataset train, test;
  Model<float> model;
};

const Toy& toy() {
  static const Toy t = [] {
    SynthConfig c;
    c.n_train = 1500;
    c.n_test = 800;
    c.feature_dim = 6;
    c.clusters = 2;
    c.seed = 3;
    auto [train_set, test_set] = synth_generate(c);
    auto m = init_random<float>(oracle::small_spec(6, {12, 10, 8}, Activation::elu, true), 1);
    TrainConfig tc;
    tc.epochs = 2;
    tc.learning_rate = 0.05;
    m = train(m, train_set.batch<float>(), tc);
    return Toy{std::move(train_set), std::move(test_set), std::move(m)};
  }();
  return t;
}

PruneSchedule quick(PruneLevel level, PruneMethod method, int rounds = 3) {
  PruneSchedule s;
  s.level = level;
  s.method = method;
  s.rounds = rounds;
  s.seed = 4;
  s.damage_sample_count = 200;
  s.finetune.sample_count = 300;
  s.dropout.rounds = 80;
  return s;
}

}  // namespace

TEST(Loop, ParameterRoundsCompoundPerLayer) {
  for (PruneMethod method :
       {PruneMethod::random, PruneMethod::magnitude, PruneMethod::obd, PruneMethod::obd_sd, PruneMethod::lm}) {
    const PruneTrace t = prune_finetune_loop(toy().model, quick(PruneLevel::parameter, method, 4), toy().train, toy().test);
    ASSERT_FALSE(t.error) << *t.error;
    ASSERT_EQ(t.records.size(), 5u);
    std::vector<Index> unmasked;
    for (const auto& l : toy().model.layers) unmasked.push_back(l.parameter_count());
    unmasked.pop_back();
    const Index output_params = toy().model.layers.back().parameter_count();
    for (int r = 0; r <= 4; ++r) {
      Index total = output_params;
      for (Index u : unmasked) total += u;
      EXPECT_EQ(t.records[r].params, total) << to_string(method) << " round " << r;
      EXPECT_EQ(t.records[r].round, r);
      for (Index& u : unmasked) u -= static_cast<Index>(std::floor(0.1 * u));
    }
    EXPECT_EQ(t.records.back().neurons_per_layer, (std::vector<int>{12, 10, 8}));
  }
}

TEST(Loop, NeuronRoundsFollowRemovalRule) {
  for (PruneMethod method : {PruneMethod::random, PruneMethod::obd_sd, PruneMethod::merge,
                             PruneMethod::dropout_regression}) {
    const PruneTrace t = prune_finetune_loop(toy().model, quick(PruneLevel::neuron, method, 4), toy().train, toy().test);
    ASSERT_FALSE(t.error) << *t.error;
    std::vector<int> w{12, 10, 8};
    for (int r = 0; r <= 4; ++r) {
      EXPECT_EQ(t.records[r].neurons_per_layer, w) << to_string(method) << " round " << r;
      for (int& x : w) x -= static_cast<int>(neurons_to_remove(x, 0.1));
    }
  }
}

TEST(Loop, BaselineIsTheUnprunedModel) {
  const PruneTrace t =
      prune_finetune_loop(toy().model, quick(PruneLevel::parameter, PruneMethod::magnitude), toy().train, toy().test);
  const MetricsRecord direct = evaluate(toy().model, toy().test.batch<float>());
  EXPECT_EQ(t.records[0].metrics.auc, direct.auc);
  EXPECT_EQ(t.records[0].sizes.raw_bytes, measure_sizes(toy().model, Precision::f32).raw_bytes);
  EXPECT_EQ(t.records[0].params, toy().model.parameter_count());
}

TEST(Loop, DeterministicAndThreadIndependent) {
  PruneSchedule s = quick(PruneLevel::parameter, PruneMethod::obd_sd);
  const PruneTrace a = prune_finetune_loop(toy().model, s, toy().train, toy().test);
  s.threads = 3;
  const PruneTrace b = prune_finetune_loop(toy().model, s, toy().train, toy().test);
  s.seed = 5;
  const PruneTrace c = prune_finetune_loop(toy().model, s, toy().train, toy().test);
  for (std::size_t r = 0; r < a.records.size(); ++r) {
    EXPECT_EQ(a.records[r].metrics.auc, b.records[r].metrics.auc);
    EXPECT_EQ(a.records[r].sizes.zip_bytes, b.records[r].sizes.zip_bytes);
  }
  EXPECT_NE(a.records.back().metrics.mean_loss, c.records.back().metrics.mean_loss);
}

TEST(Loop, ObserverSeesEveryParameterReport) {
  std::vector<int> rounds;
  const PruneTrace t = prune_finetune_loop(toy().model, quick(PruneLevel::parameter, PruneMethod::obd), toy().train,
                                           toy().test, [&](int r, const DamageReport& rep) {
                                             rounds.push_back(r);
                                             EXPECT_EQ(rep.method, DamageMethod::obd);
                                             EXPECT_GT(rep.mean_h_theta.size(), 0);
                                           });
  EXPECT_EQ(rounds, (std::vector<int>{1, 2, 3}));
}

TEST(Loop, ReusedNeuronReportStillRemovesLowestOriginalDamage) {
  PruneSchedule s = quick(PruneLevel::neuron, PruneMethod::magnitude, 3);
  s.recompute_damage = false;
  s.finetune.epochs = 0;
  const PruneTrace t = prune_finetune_loop(toy().model, s, toy().train, toy().test);
  ASSERT_FALSE(t.error);
  EXPECT_EQ(t.records.back().neurons_per_layer, (std::vector<int>{9, 7, 5}));
  // Without fine-tuning, reuse and a single bulk removal of the same neurons agree.
  const NeuronDamageReport rep = aggregate_to_neurons(damage_magnitude(toy().model), toy().model);
  Model<float> bulk = toy().model;
  for (Index l = 0; l < 3; ++l) {
    std::vector<Index> all(static_cast<std::size_t>(rep.layers[l].size()));
    std::iota(all.begin(), all.end(), Index{0});
    bulk = remove_neurons(bulk, l, detail::lowest(rep.layers[l], all, rep.layers[l].size() - t.records.back().neurons_per_layer[l]));
  }
  EXPECT_EQ(t.records.back().metrics.auc, evaluate(bulk, toy().test.batch<float>()).auc);
}

TEST(Loop, DivergenceEndsTheTraceWithAnError) {
  Dataset bad = toy().train;
  bad.features(0, 0) = std::numeric_limits<double>::quiet_NaN();
  PruneSchedule s = quick(PruneLevel::parameter, PruneMethod::magnitude);
  s.finetune.sample_count = 0;
  const PruneTrace t = prune_finetune_loop(toy().model, s, bad, toy().test);
  ASSERT_TRUE(t.error.has_value());
  EXPECT_EQ(t.records.size(), 1u);
}

TEST(Schedule, ValidateRejectsInconsistentSchedules) {
  PruneSchedule s;
  s.fraction = 0.0;
  EXPECT_THROW(s.validate(), SpecError);
  s = {};
  s.method = PruneMethod::merge;
  EXPECT_THROW(s.validate(), SpecError);
  s.level = PruneLevel::neuron;
  EXPECT_NO_THROW(s.validate());
  s.scope = PruneScope::global;
  EXPECT_THROW(s.validate(), SpecError);
  s = {};
  s.method = PruneMethod::dropout_regression;
  EXPECT_THROW(s.validate(), SpecError);
  s = {};
  s.rounds = -1;
  EXPECT_THROW(s.validate(), SpecError);
}

TEST(Schedule, NamesRoundTrip) {
  for (PruneMethod m : {PruneMethod::random, PruneMethod::magnitude, PruneMethod::obd, PruneMethod::obd_sd,
                        PruneMethod::lm, PruneMethod::dropout_regression, PruneMethod::merge})
    EXPECT_EQ(parse_prune_method(to_string(m)), m);
  EXPECT_EQ(parse_prune_level("neuron"), PruneLevel::neuron);
  EXPECT_EQ(parse_prune_scope("global"), PruneScope::global);
  EXPECT_THROW(parse_prune_method("oracle"), SpecError);
  EXPECT_FALSE(damage_method_of(PruneMethod::merge));
  EXPECT_EQ(*damage_method_of(PruneMethod::obd_sd), DamageMethod::obd_sd);
}

TEST(Seeds, DerivedSeedsAreDistinct) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    for (std::uint64_t round = 0; round < 11; ++round)
      for (std::uint64_t stream = 0; stream < 10; ++stream) seen.insert(derive_seed(seed, round, stream));
  EXPECT_EQ(seen.size(), 5u * 11u * 10u);
  EXPECT_EQ(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
}

TEST(Trace, CsvHasHeaderAndOneRowPerRound) {
  const PruneTrace t =
      prune_finetune_loop(toy().model, quick(PruneLevel::neuron, PruneMethod::random, 2), toy().train, toy().test);
  std::ostringstream out;
  write_trace_csv(out, t);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "round,method,level,params,neurons_per_layer,raw_bytes,zip_bytes,auc,tpr_at_fpr,loss");
  std::getline(in, line);
  const std::string prefix = "0,random,neuron," + std::to_string(t.records[0].params) + ",12;10;8,";
  EXPECT_EQ(line.rfind(prefix, 0), 0u) << line;
  int rows = 1;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3);
}

TEST(Config, DeskConfigParses) {
  const ExperimentConfig c = load_config(PRUNEKIT_SOURCE_DIR "/configs/desk.json");
  EXPECT_EQ(c.dataset.synth.n_train, 50000);
  EXPECT_EQ(c.model.hidden_widths(), (std::vector<int>{128, 96, 64, 64, 64}));
  ASSERT_NE(c.find_run("param_obd_sd"), nullptr);
  EXPECT_EQ(c.find_run("param_obd_sd")->seeds.size(), 5u);
  EXPECT_EQ(c.find_run("neuron_dropout")->schedule.method, PruneMethod::dropout_regression);
  EXPECT_EQ(c.find_run("scratch_half_neurons")->kind, RunConfig::Kind::scratch);
  EXPECT_EQ(c.find_run("nope"), nullptr);
}

TEST(Config, ExplicitHiddenLayers) {
  const ExperimentConfig c = parse_config(R"({
    "model": {"hidden": [{"width": 7, "activation": "relu", "batchnorm": true}, {"width": 3}],
              "output_activation": "identity", "loss": "squared_error"},
    "runs": []})");
  EXPECT_EQ(c.model.hidden_widths(), (std::vector<int>{7, 3}));
  EXPECT_EQ(c.model.hidden[0].activation, Activation::relu);
  EXPECT_TRUE(c.model.hidden[0].has_batchnorm);
  EXPECT_EQ(c.model.loss, LossKind::squared_error);
}

TEST(Config, ErrorsCarryTheFieldPath) {
  auto expect_error = [](const std::string& text, const std::string& prefix) {
    try {
      parse_config(text);
      FAIL() << "expected ConfigError " << prefix;
    } catch (const ConfigError& e) {
      EXPECT_EQ(std::string(e.what()).rfind(prefix, 0), 0u) << e.what();
    }
  };
  expect_error(R"({"runs": [{"name": "a", "fraction": 1.5}]})", "runs[0]");
  expect_error(R"({"runs": [{"name": "a"}, {"name": "a"}]})", "runs[1].name");
  expect_error(R"({"runs": [{"name": "a", "seeds": [1, 1]}]})", "runs[0].seeds");
  expect_error(R"({"runs": [{"name": "a b"}]})", "runs[0].name");
  expect_error(R"({"runs": [{"name": "a", "finetune": {"epoch": 1}}]})", "runs[0].finetune.epoch");
  expect_error(R"({"train": {"learning_rate": 0}})", "train.learning_rate");
  expect_error(R"({"dataset": {"type": "csv", "train": "x.csv"}})", "dataset");
  expect_error(R"({"model": {"scale": 0.1, "hidden": [{"width": 3}]}})", "model");
  expect_error(R"({"colour": 1})", "colour");
  expect_error(R"({"runs": [)", "<root>");
  expect_error(R"({"target_fpr": 0})", "target_fpr");
}
