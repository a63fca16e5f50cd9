#include <gtest/gtest.h>

#include "oracles.hpp"
#include "prunekit/model.hpp"

using namespace prunekit;

TEST(ModelSpec, DeskDefaultIsEighthScale) {
  const ModelSpec spec = ModelSpec::desk_default(64);
  EXPECT_EQ(spec.hidden_widths(), (std::vector<int>{128, 96, 64, 64, 64}));
  for (const auto& h : spec.hidden) {
    EXPECT_EQ(h.activation, Activation::elu);
    EXPECT_TRUE(h.has_batchnorm);
  }
  const auto m = init_random<float>(spec, 1);
  EXPECT_EQ(m.parameter_count(), 64 * 128 + 128 + 128 * 96 + 96 + 96 * 64 + 64 + 2 * (64 * 64 + 64) + 64 + 1);
  EXPECT_EQ(m.hidden_count(), 5);
}

TEST(ModelSpec, ValidateRejectsBadSpecs) {
  ModelSpec spec = ModelSpec::desk_default(8);
  spec.output.width = 2;
  EXPECT_THROW(spec.validate(), SpecError);
  spec = ModelSpec::desk_default(8);
  spec.hidden[1].width = 0;
  EXPECT_THROW(spec.validate(), SpecError);
  spec = ModelSpec::desk_default(8);
  spec.hidden[0].dropout_rate = 1.0;
  EXPECT_THROW(spec.validate(), SpecError);
  spec = ModelSpec::desk_default(8);
  spec.loss = LossKind::squared_error;
  EXPECT_THROW(spec.validate(), SpecError);
  spec.output.activation = Activation::identity;
  EXPECT_NO_THROW(spec.validate());
  spec = ModelSpec::desk_default(0);
  EXPECT_THROW(spec.validate(), SpecError);
}

TEST(Model, InitIsDeterministicAndWithinGlorotBound) {
  const ModelSpec spec = ModelSpec::desk_default(16, 0.0625);
  const auto a = init_random<double>(spec, 42);
  const auto b = init_random<double>(spec, 42);
  const auto c = init_random<double>(spec, 43);
  EXPECT_EQ(flat_parameters(a), flat_parameters(b));
  EXPECT_NE(flat_parameters(a), flat_parameters(c));
  for (const auto& l : a.layers) {
    const double limit = std::sqrt(6.0 / static_cast<double>(l.in_width() + l.out_width()));
    EXPECT_LE(l.weight.cwiseAbs().maxCoeff(), limit);
    EXPECT_EQ(l.bias.cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Model, FloatAndDoubleInitAgree) {
  const ModelSpec spec = ModelSpec::desk_default(16, 0.0625);
  const auto f = init_random<float>(spec, 5);
  const auto d = init_random<double>(spec, 5);
  EXPECT_EQ(flat_parameters(f), flat_parameters(d).cast<float>());
}

TEST(ParamLayout, FlatAndLocateAreInverse) {
  const auto m = init_random<float>(ModelSpec::desk_default(10, 0.03), 3);
  const ParamLayout all = ParamLayout::all(m);
  const ParamLayout pr = ParamLayout::prunable(m);
  EXPECT_EQ(all.size(), m.parameter_count());
  EXPECT_EQ(pr.size(), m.prunable_parameter_count());
  EXPECT_EQ(pr.layer_count(), m.hidden_count());
  for (Index f = 0; f < all.size(); ++f) {
    const ParamIndex p = all.locate(f);
    EXPECT_EQ(all.flat(p), f);
    if (f < pr.size()) {
      EXPECT_EQ(pr.locate(f), p);
    }
  }
  EXPECT_THROW(all.locate(all.size()), DimensionError);
}

TEST(ParamLayout, BiasIsLastColumn) {
  const auto m = init_random<double>(ModelSpec::desk_default(6, 0.01), 3);
  const ParamLayout all = ParamLayout::all(m);
  for (Index l = 0; l < all.layer_count(); ++l) {
    EXPECT_TRUE(all.is_bias({l, 0, all.cols(l) - 1}));
    EXPECT_FALSE(all.is_bias({l, 0, 0}));
  }
}

TEST(Model, FlatParametersRoundTrip) {
  auto m = init_random<double>(ModelSpec::desk_default(7, 0.02), 9);
  VectorX<double> theta = VectorX<double>::LinSpaced(m.parameter_count(), -1.0, 1.0);
  set_flat_parameters(m, theta);
  EXPECT_EQ(flat_parameters(m), theta);
  const ParamLayout all = ParamLayout::all(m);
  for (Index f = 0; f < all.size(); f += 7) EXPECT_EQ(parameter(m, all.locate(f)), theta(f));
}

TEST(Model, MasksZeroEntriesAndSurviveParameterWrites) {
  auto m = init_random<double>(ModelSpec::desk_default(5, 0.02), 2);
  MaskMatrix mask = MaskMatrix::Ones(m.layers[0].out_width(), m.layers[0].in_width() + 1);
  mask(0, 0) = 0;
  mask(1, m.layers[0].in_width()) = 0;
  set_mask(m, 0, mask);
  EXPECT_EQ(m.layers[0].weight(0, 0), 0.0);
  EXPECT_EQ(m.layers[0].unmasked_count(), m.layers[0].parameter_count() - 2);
  EXPECT_EQ(m.unmasked_prunable_count(), m.prunable_parameter_count() - 2);
  m.layers[0].bias(1) = 3.0;
  m.apply_masks();
  EXPECT_EQ(m.layers[0].bias(1), 0.0);
  set_flat_parameters(m, VectorX<double>(VectorX<double>::Ones(m.parameter_count())));
  EXPECT_EQ(m.layers[0].weight(0, 0), 0.0);
  EXPECT_THROW(set_mask(m, 0, MaskMatrix::Ones(1, 1)), DimensionError);
}

TEST(Model, CastRoundTripPreservesFloatValues) {
  const auto f = oracle::random_model<float>(ModelSpec::desk_default(9, 0.03), 4);
  const auto back = f.cast<double>().cast<float>();
  EXPECT_EQ(flat_parameters(f), flat_parameters(back));
  EXPECT_EQ(f.spec(), back.spec());
}

TEST(Model, ConsistencyCheckCatchesBrokenShapes) {
  auto m = init_random<double>(ModelSpec::desk_default(5, 0.02), 2);
  EXPECT_NO_THROW(m.check_consistency());
  m.layers[1].weight.conservativeResize(m.layers[1].out_width(), m.layers[1].in_width() + 1);
  EXPECT_THROW(m.check_consistency(), DimensionError);
}

TEST(Forward, MatchesReferenceForEveryActivation) {
  for (Activation act : {Activation::elu, Activation::relu, Activation::identity}) {
    for (bool bn : {false, true}) {
      const auto spec = oracle::small_spec(6, {9, 7, 5}, act, bn);
      const auto m = oracle::random_model<double>(spec, 17);
      const auto b = oracle::random_batch<double>(6, 25, 3);
      const VectorX<double> got = forward(m, b.features);
      const Eigen::VectorXd want = oracle::reference_forward(m, b.features);
      EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-13) << to_string(act) << " bn=" << bn;
    }
  }
}

TEST(Forward, KeepMaskZeroesNeuronOutputs) {
  const auto spec = oracle::small_spec(4, {5, 3}, Activation::elu, true);
  auto m = oracle::random_model<double>(spec, 1);
  const auto b = oracle::random_batch<double>(4, 10, 2);
  NeuronKeepMask<double> keep{VectorX<double>::Ones(5), VectorX<double>::Ones(3)};
  keep[0](2) = 0.0;
  auto cut = m;
  cut.layers[1].weight.col(2).setZero();
  EXPECT_LT((forward(m, b.features, &keep) - forward(cut, b.features)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Loss, CrossEntropyClampsScores) {
  VectorX<double> scores(3), labels(3);
  scores << 0.0, 1.0, 0.25;
  labels << 1.0, 0.0, 1.0;
  const VectorX<double> l = sample_losses(LossKind::binary_cross_entropy, scores, labels);
  EXPECT_NEAR(l(0), -std::log(1e-7), 1e-9);
  EXPECT_NEAR(l(1), -std::log(1e-7), 1e-6);
  EXPECT_NEAR(l(2), -std::log(0.25), 1e-15);
  EXPECT_TRUE(l.allFinite());
}

TEST(Loss, SquaredError) {
  VectorX<double> scores(2), labels(2);
  scores << 0.5, -1.0;
  labels << 1.0, 1.0;
  const VectorX<double> l = sample_losses(LossKind::squared_error, scores, labels);
  EXPECT_DOUBLE_EQ(l(0), 0.25);
  EXPECT_DOUBLE_EQ(l(1), 4.0);
}

TEST(Loss, ModelLossMatchesReference) {
  const auto spec = oracle::small_spec(5, {8, 4}, Activation::elu, true);
  const auto m = oracle::random_model<double>(spec, 8);
  const auto b = oracle::random_batch<double>(5, 40, 9);
  EXPECT_NEAR(mean_loss(m, b), oracle::reference_loss(m, b), 1e-14);
}
