#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "fcad/objective.hpp"
#include "oracles.hpp"

namespace fcad {
namespace {

Tensor row(double a, double b) {
  Tensor t(1, 2);
  t << a, b;
  return t;
}

ModelParams tiny(std::vector<double> flat) {
  // 1 -> [] -> 2 -> 2 has 1*2+2 + 2*2+2 = 10 parameters.
  return ModelParams(LayerSpec{1, {}, 2, 2}, std::move(flat));
}

std::vector<double> with_head(double a, double b) {
  std::vector<double> v(10, 0.0);
  v[0] = a;
  v[1] = b;
  return v;
}

TEST(CrossEntropy, ConfidentCorrectIsNearZero) {
  const Label l[] = {Label::normal};
  EXPECT_LT(cross_entropy(row(30, -30), l), 1e-12);
}

TEST(CrossEntropy, UniformLogitsGiveLnTwo) {
  for (Label label : {Label::normal, Label::anomalous}) {
    const Label l[] = {label};
    EXPECT_NEAR(cross_entropy(row(0, 0), l), 0.69314718, 1e-8);
  }
}

TEST(CrossEntropy, WrongClassClosedForm) {
  const Label l[] = {Label::anomalous};
  EXPECT_NEAR(cross_entropy(row(1, 0), l), 1.31326169, 1e-8);
}

TEST(CrossEntropy, ShapeMismatchRejects) {
  const Label l[] = {Label::normal, Label::normal};
  EXPECT_THROW(cross_entropy(row(1, 0), l), ObjectiveError);
}

TEST(CrossEntropy, ShiftInvariantAndMatchesOracle) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 4.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 20;
    Tensor logits(n, 2);
    std::vector<std::array<double, 2>> plain(static_cast<std::size_t>(n));
    std::vector<Label> labels(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      logits(i, 0) = plain[i][0] = g(rng);
      logits(i, 1) = plain[i][1] = g(rng);
      labels[i] = (rng() & 1) ? Label::anomalous : Label::normal;
    }
    const double base = cross_entropy(logits, labels);
    EXPECT_GE(base, 0.0);
    EXPECT_NEAR(base, oracle::cross_entropy(plain, labels), 1e-12);
    const Tensor shifted = (logits.array() + 1000.0).matrix();
    EXPECT_NEAR(cross_entropy(shifted, labels), base, 1e-8);
  }
}

TEST(Proximal, EqualParamsGiveExactZero) {
  const ModelParams p = init_params(LayerSpec{3, {4}, 2, 2}, 1);
  EXPECT_EQ(proximal_term(p, p, 0.1), 0.0);
}

TEST(Proximal, ThreeFourDifference) {
  const ModelParams global = tiny(with_head(0, 0));
  const ModelParams local = tiny(with_head(3, 4));
  EXPECT_NEAR(proximal_term(local, global, 1.0), 25.0, 1e-8);
  EXPECT_NEAR(proximal_term(local, global, 0.1), 2.5, 1e-8);
}

TEST(Proximal, FingerprintMismatchRejects) {
  const ModelParams a = init_params(LayerSpec{3, {4}, 2, 2}, 1);
  const ModelParams b = init_params(LayerSpec{3, {5}, 2, 2}, 1);
  EXPECT_THROW(proximal_term(a, b, 0.1), ObjectiveError);
}

TEST(Proximal, GradientIsTwoLambdaDifference) {
  const LayerSpec spec{4, {5}, 3, 2};
  const ModelParams local = init_params(spec, 1);
  const ModelParams global = init_params(spec, 2);
  const double lambda = 0.37;
  Graph g;
  const BoundModel m = bind(g, local, true);
  const Expr prox = proximal_term(m, global, lambda);
  EXPECT_NEAR(prox.scalar(), proximal_term(local, global, lambda), 1e-12);
  const std::vector<double> grad = flatten_gradients(m, g.backward(prox));
  for (std::size_t i = 0; i < grad.size(); ++i) {
    EXPECT_NEAR(grad[i], 2.0 * lambda * (local.flat()[i] - global.flat()[i]), 1e-10);
  }
}

TEST(TotalLoss, HandSum) {
  Graph g;
  EXPECT_NEAR(total_loss(g.constant(0.3), g.constant(0.7), g.constant(0.25), 1.0).scalar(), 1.25, 1e-15);
}

TEST(TotalLoss, ZeroedTermsLeaveContrastive) {
  Graph g;
  EXPECT_EQ(total_loss(g.constant(0.3), g.constant(0.7), g.constant(0.0), 0.0).scalar(), 0.3);
}

TEST(TotalLoss, MissingContrastiveFallsBack) {
  Graph g;
  EXPECT_EQ(total_loss(std::nullopt, g.constant(0.7), g.constant(0.25), 2.0).scalar(), 2.0 * 0.7 + 0.25);
  EXPECT_EQ(total_loss(std::nullopt, g.constant(0.7), std::nullopt, 2.0).scalar(), 2.0 * 0.7);
}

TEST(TotalLoss, GradientIsSumOfComponentGradients) {
  const LayerSpec spec{4, {6}, 3, 2};
  const ModelParams local = init_params(spec, 4);
  const ModelParams global = init_params(spec, 5);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> d;
  Tensor x(8, 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = d(rng);
  const std::vector<Label> labels = {Label::normal, Label::anomalous, Label::normal, Label::normal,
                                     Label::anomalous, Label::normal, Label::anomalous, Label::normal};
  const PairSet pairs = build_pairs(labels, rng, {});
  const double lambda_class = 0.8;

  // which: 0 contrastive, 1 classification, 2 proximal, 3 total.
  auto grad_of = [&](int which) {
    Graph g;
    const BoundModel m = bind(g, local, true);
    const Expr z = encode(m, g.constant(x));
    const Expr con = nt_xent(z, pairs, 0.5);
    const Expr cls = cross_entropy(classify(m, z), labels);
    const Expr prox = proximal_term(m, global, 0.1);
    const Expr root = which == 0   ? con
                      : which == 1 ? lambda_class * cls
                      : which == 2 ? prox
                                   : total_loss(con, cls, prox, lambda_class);
    return flatten_gradients(m, g.backward(root));
  };
  const auto a = grad_of(0), b = grad_of(1), c = grad_of(2), t = grad_of(3);
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(t[i], a[i] + b[i] + c[i], 1e-10);
}

TEST(Sgd, ZeroGradientIsNoOp) {
  const ModelParams p = init_params(LayerSpec{3, {4}, 2, 2}, 1);
  const std::vector<double> zero(p.size(), 0.0);
  const StepResult r = sgd_step(p, zero, zero, {});
  EXPECT_TRUE(r.params == p);
}

TEST(Sgd, PlainStepHandArithmetic) {
  ObjectiveConfig cfg;
  cfg.momentum = 0.0;
  cfg.learning_rate = 0.1;
  const ModelParams p = tiny(with_head(0, 0));
  const std::vector<double> g = with_head(1, -2);
  const StepResult r = sgd_step(p, g, std::vector<double>(10, 0.0), cfg);
  EXPECT_DOUBLE_EQ(r.params.flat()[0], -0.1);
  EXPECT_DOUBLE_EQ(r.params.flat()[1], 0.2);
}

TEST(Sgd, MomentumUnrollsToTwoPointNine) {
  ObjectiveConfig cfg;
  cfg.momentum = 0.9;
  cfg.learning_rate = 1.0;
  const ModelParams p = tiny(with_head(0, 0));
  const std::vector<double> g = with_head(1.5, -2.0);
  const StepResult one = sgd_step(p, g, std::vector<double>(10, 0.0), cfg);
  const StepResult two = sgd_step(one.params, g, one.velocity, cfg);
  EXPECT_NEAR(two.params.flat()[0], -2.9 * 1.5, 1e-15);
  EXPECT_NEAR(two.params.flat()[1], 2.9 * 2.0, 1e-15);
}

TEST(Sgd, LengthMismatchRejects) {
  const ModelParams p = tiny(with_head(0, 0));
  EXPECT_THROW(sgd_step(p, std::vector<double>(9), std::vector<double>(10), {}), ObjectiveError);
}

TEST(Clip, ScalesDownOnlyAboveLimit) {
  std::vector<double> g{3.0, 4.0};
  EXPECT_EQ(clip_global_norm(g, 10.0), 5.0);
  EXPECT_EQ(g, (std::vector<double>{3.0, 4.0}));
  EXPECT_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g[0], 0.6, 1e-15);
  EXPECT_NEAR(g[1], 0.8, 1e-15);
}

TEST(ObjectiveConfig, ValidationRejectsBadValues) {
  ObjectiveConfig c;
  c.lambda_prox = -1;
  EXPECT_THROW(c.validate(), ObjectiveError);
  c = {};
  c.learning_rate = 0;
  EXPECT_THROW(c.validate(), ObjectiveError);
  c = {};
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), ObjectiveError);
}

}  // namespace
}  // namespace fcad
