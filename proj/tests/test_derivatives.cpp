#include <gtest/gtest.h>

#include "oracles.hpp"
#include "prunekit/derivatives.hpp"

using namespace prunekit;

namespace {

constexpr double kFloor = 1e-6;

struct FdResult {
  double max_rel = 0.0;
  Index skipped = 0;
};

FdResult check_gradient(const Model<double>& m, const Batch<double>& b) {
  const VectorX<double> g = mean_loss_gradient(m, b);
  const ParamLayout layout = ParamLayout::all(m);
  FdResult r;
  for (Index f = 0; f < layout.size(); ++f) {
    const ParamIndex p = layout.locate(f);
    auto perturb = [&](Model<double>& q, double t) { parameter(q, p) += t; };
    const double h = oracle::smooth_step(m, b.features, 1e-4, perturb);
    if (h == 0.0) {
      ++r.skipped;
      continue;
    }
    const double fd = oracle::central_difference(
        [&](double t) {
          Model<double> q = m;
          perturb(q, t);
          return oracle::reference_loss(q, b);
        },
        h);
    r.max_rel = std::max(r.max_rel, oracle::rel_error(g(f), fd, kFloor));
  }
  return r;
}

// Hessian diagonal of the mean loss against differences of analytic gradients.
FdResult check_hessian(const Model<double>& m, const Batch<double>& b) {
  const auto d = hessian_diag(m, b);
  const VectorX<double> h_mean = d.hessian_diag.rowwise().mean();
  FdResult r;
  for (Index f = 0; f < d.layout.size(); ++f) {
    const ParamIndex p = d.layout.locate(f);
    auto perturb = [&](Model<double>& q, double t) { parameter(q, p) += t; };
    const double h = oracle::smooth_step(m, b.features, 1e-4, perturb);
    if (h == 0.0) {
      ++r.skipped;
      continue;
    }
    const double fd = oracle::central_difference(
        [&](double t) {
          Model<double> q = m;
          perturb(q, t);
          return mean_loss_gradient(q, b)(f);
        },
        h);
    r.max_rel = std::max(r.max_rel, oracle::rel_error(h_mean(f), fd, kFloor));
  }
  return r;
}

}  // namespace

TEST(Gradient, MatchesFiniteDifferences) {
  for (Activation act : {Activation::elu, Activation::relu, Activation::identity}) {
    for (bool bn : {false, true}) {
      const auto m = oracle::random_model<double>(oracle::small_spec(5, {7, 6, 4}, act, bn), 11);
      const auto b = oracle::random_batch<double>(5, 6, 12);
      const FdResult r = check_gradient(m, b);
      EXPECT_LT(r.max_rel, 1e-4) << to_string(act) << " bn=" << bn;
      EXPECT_EQ(r.skipped, 0);
    }
  }
}

TEST(Gradient, PerSampleGradientsAverageToBatchGradient) {
  const auto m = oracle::random_model<double>(oracle::small_spec(6, {8, 5}, Activation::elu, true), 3);
  const auto b = oracle::random_batch<double>(6, 50, 4);
  const auto d = backward(m, b);
  const VectorX<double> mean = d.gradient.rowwise().mean();
  EXPECT_LT((mean - mean_loss_gradient(m, b)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Gradient, SquaredErrorModel) {
  ModelSpec spec = oracle::small_spec(4, {6, 3}, Activation::elu, false);
  spec.output.activation = Activation::identity;
  spec.loss = LossKind::squared_error;
  const auto m = oracle::random_model<double>(spec, 21);
  auto b = oracle::random_batch<double>(4, 5, 22);
  EXPECT_LT(check_gradient(m, b).max_rel, 1e-4);
  EXPECT_LT(check_hessian(m, b).max_rel, 1e-3);
}

TEST(HessianDiag, MatchesDifferencesOfGradients) {
  for (Activation act : {Activation::elu, Activation::relu, Activation::identity}) {
    for (bool bn : {false, true}) {
      const auto m = oracle::random_model<double>(oracle::small_spec(5, {7, 6, 4}, act, bn), 31);
      const auto b = oracle::random_batch<double>(5, 3, 32);
      const FdResult r = check_hessian(m, b);
      EXPECT_LT(r.max_rel, 1e-3) << to_string(act) << " bn=" << bn;
      EXPECT_EQ(r.skipped, 0);
    }
  }
}

TEST(HessianDiag, PerSampleMatchesSingleSampleBatches) {
  const auto m = oracle::random_model<double>(oracle::small_spec(4, {6, 5}, Activation::elu, true), 5);
  const auto b = oracle::random_batch<double>(4, 7, 6);
  const auto all = hessian_diag(m, b);
  for (Index s = 0; s < b.size(); ++s) {
    const auto one = hessian_diag(m, b.middle(s, 1));
    EXPECT_EQ(one.hessian_diag.col(0), all.hessian_diag.col(s));
    EXPECT_EQ(one.gradient.col(0), all.gradient.col(s));
  }
}

TEST(HessianDiag, IdentityNetworkBiasCurvatureIsClosedForm) {
  // One identity hidden unit feeding a squared-error output: L = (w2 (w1 x + b1) + b2 - y)^2.
  ModelSpec spec = oracle::small_spec(1, {1}, Activation::identity, false);
  spec.output.activation = Activation::identity;
  spec.loss = LossKind::squared_error;
  auto m = init_random<double>(spec, 0);
  m.layers[0].weight(0, 0) = 0.7;
  m.layers[0].bias(0) = 0.2;
  m.layers[1].weight(0, 0) = -1.3;
  m.layers[1].bias(0) = 0.1;
  Batch<double> b{MatrixX<double>::Constant(1, 1, 2.0), VectorX<double>::Constant(1, 0.5)};
  const auto d = hessian_diag(m, b);
  const double w2 = -1.3, x = 2.0, a1 = 0.7 * 2.0 + 0.2;
  EXPECT_NEAR(d.hessian_diag(0, 0), 2 * w2 * w2 * x * x, 1e-12);  // w1
  EXPECT_NEAR(d.hessian_diag(1, 0), 2 * w2 * w2, 1e-12);          // b1
  EXPECT_NEAR(d.hessian_diag(2, 0), 2 * a1 * a1, 1e-12);          // w2
  EXPECT_NEAR(d.hessian_diag(3, 0), 2.0, 1e-12);                  // b2
}

TEST(Derivatives, MaskedParametersHaveZeroDerivatives) {
  auto m = oracle::random_model<double>(oracle::small_spec(4, {5, 3}, Activation::elu, true), 7);
  MaskMatrix mask = MaskMatrix::Ones(5, 5);
  mask(2, 1) = 0;
  mask(4, 4) = 0;
  set_mask(m, 0, mask);
  const auto b = oracle::random_batch<double>(4, 9, 8);
  const auto d = hessian_diag(m, b);
  for (Index f : {d.layout.flat({0, 2, 1}), d.layout.flat({0, 4, 4})}) {
    EXPECT_EQ(d.gradient.row(f).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(d.hessian_diag.row(f).cwiseAbs().maxCoeff(), 0.0);
  }
  EXPECT_EQ(mean_loss_gradient(m, b)(d.layout.flat({0, 2, 1})), 0.0);
}

TEST(Derivatives, ClampRegionHasZeroDerivatives) {
  ModelSpec spec = oracle::small_spec(1, {1}, Activation::identity, false);
  auto m = init_random<double>(spec, 0);
  m.layers[0].weight(0, 0) = 1.0;
  m.layers[1].weight(0, 0) = 100.0;  // logit 100 -> score clamps to 1 - 1e-7
  Batch<double> b{MatrixX<double>::Constant(1, 1, 1.0), VectorX<double>::Constant(1, 0.0)};
  const auto d = hessian_diag(m, b);
  EXPECT_EQ(d.gradient.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(d.hessian_diag.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Derivatives, NonFiniteValuesNameTheParameter) {
  auto m = oracle::random_model<double>(oracle::small_spec(3, {4}, Activation::elu, false), 1);
  m.layers[1].weight(0, 2) = std::numeric_limits<double>::quiet_NaN();
  const auto b = oracle::random_batch<double>(3, 2, 1);
  try {
    hessian_diag(m, b);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("parameter"), std::string::npos);
  }
}

TEST(Moments, WelfordMergeMatchesTwoPass) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(3.0, 2.0);
  Eigen::MatrixXd x(4, 300);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  MomentAccumulator a(4), b(4), whole(4);
  for (Index s = 0; s < 300; ++s) {
    (s < 111 ? a : b).push(x.col(s));
    whole.push(x.col(s));
  }
  a.merge(b);
  const Eigen::VectorXd mean = x.rowwise().mean();
  const Eigen::VectorXd var = (x.colwise() - mean).rowwise().squaredNorm() / 299.0;
  EXPECT_LT((a.mean() - mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((a.variance() - var).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((whole.variance() - var).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((a.mean_square() - x.cwiseAbs2().rowwise().mean()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Moments, MatchPerSampleDerivatives) {
  const auto m = oracle::random_model<double>(oracle::small_spec(5, {6, 4}, Activation::elu, true), 2);
  const auto b = oracle::random_batch<double>(5, 150, 3);
  const auto d = hessian_diag(m, b);
  const DerivativeMoments mo = derivative_moments(m, b, true);
  const Eigen::VectorXd hm = d.hessian_diag.rowwise().mean();
  const Eigen::VectorXd hv = (d.hessian_diag.colwise() - hm).rowwise().squaredNorm() / 149.0;
  EXPECT_LT((mo.hess_mean - hm).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((mo.hess_var - hv).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((mo.grad_mean - d.gradient.rowwise().mean()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((mo.grad_sq_mean - d.gradient.cwiseAbs2().rowwise().mean()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(mo.sample_count, 150);
}

TEST(Moments, IndependentOfThreadCount) {
  const auto m = oracle::random_model<float>(oracle::small_spec(8, {16, 8}, Activation::elu, true), 4);
  const auto b = oracle::random_batch<float>(8, 1000, 5);
  const DerivativeMoments one = derivative_moments(m, b, true, 1);
  const DerivativeMoments four = derivative_moments(m, b, true, 4);
  EXPECT_EQ(one.hess_mean, four.hess_mean);
  EXPECT_EQ(one.hess_var, four.hess_var);
  EXPECT_EQ(one.grad_sq_mean, four.grad_sq_mean);
}

TEST(Moments, SingleSampleHasZeroVariance) {
  const auto m = oracle::random_model<double>(oracle::small_spec(3, {4}, Activation::elu, false), 4);
  const auto b = oracle::random_batch<double>(3, 1, 5);
  EXPECT_EQ(derivative_moments(m, b, true).hess_var.cwiseAbs().maxCoeff(), 0.0);
}
