// Copyright 2026 The PropMix Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "propmix/backbone.h"
#include "propmix/checkpoint.h"
#include "propmix/error.h"
#include "test_util.h"

namespace propmix {
namespace {

using testing::finite_difference_check;
using testing::random_matrix;
using testing::random_simplex_rows;

ParamSet single_linear(int in, int out) {
  ParamSet p;
  p.layers.push_back({Matrix::Zero(out, in), Vector::Zero(out)});
  return p;
}

TEST(Forward, IdentityLayerReturnsInput) {
  ParamSet p = single_linear(3, 3);
  p.layers[0].weight = Matrix::Identity(3, 3);
  Matrix x(1, 3);
  x << 1.5, -2.0, 0.25;
  EXPECT_EQ(forward(p, x), x);
}

TEST(Forward, ZeroParamsGiveZeroLogits) {
  const std::vector<int> dims{4, 5, 3};
  ParamSet p = init_mlp(dims, Activation::kRelu, Head::kClassifier, 3).zeros_like();
  const Matrix out = forward(p, random_matrix(6, 4, 1));
  EXPECT_TRUE(out.isZero(0.0));
}

TEST(Forward, MatchesStraightLineOracle) {
  const std::vector<int> dims{3, 4, 2};
  for (Activation act : {Activation::kRelu, Activation::kTanh}) {
    const ParamSet p = init_mlp(dims, act, Head::kClassifier, 0);
    const Matrix x = random_matrix(5, 3, 11);
    const Matrix out = forward(p, x);
    const auto& l0 = p.layers[0];
    const auto& l1 = p.layers[1];
    for (int r = 0; r < 5; ++r) {
      double h[4];
      for (int j = 0; j < 4; ++j) {
        double s = l0.bias[j];
        for (int i = 0; i < 3; ++i) s += l0.weight(j, i) * x(r, i);
        h[j] = act == Activation::kRelu ? (s > 0.0 ? s : 0.0) : std::tanh(s);
      }
      for (int c = 0; c < 2; ++c) {
        double s = l1.bias[c];
        for (int j = 0; j < 4; ++j) s += l1.weight(c, j) * h[j];
        EXPECT_NEAR(out(r, c), s, 1e-12);
      }
    }
  }
}

TEST(Forward, DimensionMismatchThrows) {
  const std::vector<int> dims{4, 3};
  const ParamSet p = init_mlp(dims, Activation::kRelu, Head::kClassifier, 0);
  EXPECT_THROW(forward(p, Matrix::Zero(2, 5)), ShapeError);
}

TEST(Forward, EmbedderRowsAreUnitNorm) {
  const std::vector<int> dims{6, 8, 4};
  const ParamSet p = init_mlp(dims, Activation::kTanh, Head::kEmbedder, 9);
  const Matrix z = forward(p, random_matrix(10, 6, 2));
  for (int r = 0; r < z.rows(); ++r) EXPECT_NEAR(z.row(r).norm(), 1.0, 1e-12);
}

TEST(Forward, Deterministic) {
  const std::vector<int> dims{5, 7, 3};
  const ParamSet a = init_mlp(dims, Activation::kRelu, Head::kClassifier, 42);
  const ParamSet b = init_mlp(dims, Activation::kRelu, Head::kClassifier, 42);
  const Matrix x = random_matrix(4, 5, 3);
  EXPECT_EQ(forward(a, x), forward(b, x));
}

TEST(ParamSetTest, ValidateRejectsBrokenChain) {
  ParamSet p;
  p.layers.push_back({Matrix::Zero(4, 3), Vector::Zero(4)});
  p.layers.push_back({Matrix::Zero(2, 5), Vector::Zero(2)});
  EXPECT_THROW(p.validate(), ShapeError);
}

TEST(ParamSetTest, FlattenRoundTrip) {
  const std::vector<int> dims{3, 4, 2};
  const ParamSet p = init_mlp(dims, Activation::kRelu, Head::kClassifier, 5);
  const auto flat = p.flatten();
  EXPECT_EQ(flat.size(), p.parameter_count());
  EXPECT_EQ(p.parameter_count(), 3u * 4 + 4 + 4 * 2 + 2);
  ParamSet q = p.zeros_like();
  q.assign_flat(flat);
  EXPECT_EQ(q.flatten(), flat);
  EXPECT_THROW(q.assign_flat(std::vector<double>(flat.size() - 1)), ShapeError);
}

TEST(InitMlp, WithinFanInBounds) {
  const std::vector<int> dims{16, 9, 4};
  const ParamSet p = init_mlp(dims, Activation::kRelu, Head::kClassifier, 1);
  for (const auto& l : p.layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in()));
    EXPECT_LE(l.weight.cwiseAbs().maxCoeff(), bound);
    EXPECT_LE(l.bias.cwiseAbs().maxCoeff(), bound);
  }
}

TEST(Softmax, ZeroRowIsUniform) {
  const Matrix p = softmax(Matrix::Zero(1, 4));
  for (int c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(p(0, c), 0.25);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  Matrix l(1, 2);
  l << 1000.0, 0.0;
  const Matrix p = softmax(l);
  EXPECT_TRUE(p.allFinite());
  EXPECT_NEAR(p(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(p(0, 1), 0.0, 1e-12);
}

TEST(Softmax, LogTwoVersusZero) {
  Matrix l(1, 2);
  l << std::log(2.0), 0.0;
  const Matrix p = softmax(l);
  EXPECT_NEAR(p(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p(0, 1), 1.0 / 3.0, 1e-15);
}

TEST(SoftmaxProperty, RowsSumToOneAndShiftInvariant) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix l = random_matrix(8, 7, seed, 5.0);
    const Matrix p = softmax(l);
    Matrix shifted = l;
    const Matrix shift = random_matrix(8, 1, seed + 100, 50.0);
    for (int r = 0; r < 8; ++r) shifted.row(r).array() += shift(r, 0);
    const Matrix q = softmax(shifted);
    for (int r = 0; r < 8; ++r) {
      EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-12);
      EXPECT_GE(p.row(r).minCoeff(), 0.0);
    }
    EXPECT_LT((p - q).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(CrossEntropy, PerfectPredictionIsZero) {
  Matrix p = Matrix::Zero(1, 3);
  p(0, 1) = 1.0;
  EXPECT_DOUBLE_EQ(cross_entropy(p, p), 0.0);
}

TEST(CrossEntropy, UniformTenClasses) {
  const Matrix p = Matrix::Constant(2, 10, 0.1);
  Matrix t = Matrix::Zero(2, 10);
  t(0, 3) = 1.0;
  t(1, 7) = 1.0;
  EXPECT_NEAR(cross_entropy(p, t), 2.302585092994046, 1e-12);
}

TEST(CrossEntropy, SoftTargetEqualToProbIsEntropy) {
  const Matrix p = random_simplex_rows(1, 5, 4);
  double h = 0.0;
  for (int c = 0; c < 5; ++c) h -= p(0, c) * std::log(p(0, c));
  EXPECT_NEAR(cross_entropy(p, p), h, 1e-12);
}

TEST(CrossEntropy, ClampedAtZeroProbability) {
  Matrix p(1, 2);
  p << 1.0, 0.0;
  Matrix t(1, 2);
  t << 0.0, 1.0;
  EXPECT_NEAR(cross_entropy(p, t), -std::log(kLogClamp), 1e-9);
}

TEST(CrossEntropy, ShapeMismatchThrows) {
  EXPECT_THROW(cross_entropy(Matrix::Zero(2, 3), Matrix::Zero(2, 4)), ShapeError);
}

TEST(Grad, LinearCeMatchesClosedForm) {
  ParamSet p = single_linear(4, 3);
  p.layers[0].weight = random_matrix(3, 4, 1);
  p.layers[0].bias = random_matrix(3, 1, 2).col(0);
  Batch b{random_matrix(6, 4, 3), random_simplex_rows(6, 3, 4)};
  const auto lg = grad(p, b, CeLoss{0.0});
  const Matrix probs = softmax(forward(p, b.features));
  const Matrix expected = (probs - b.targets).transpose() * b.features / 6.0;
  EXPECT_LT((lg.grad.layers[0].weight - expected).cwiseAbs().maxCoeff(), 1e-12);
  const Vector expected_bias = (probs - b.targets).colwise().sum().transpose() / 6.0;
  EXPECT_LT((lg.grad.layers[0].bias - expected_bias).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Grad, ConstantLossGivesZeroGradient) {
  // A one-dimensional embedder outputs +-1 whatever the weights, so the
  // contrastive loss is locally constant.
  const std::vector<int> dims{3, 4, 1};
  const ParamSet p = init_mlp(dims, Activation::kTanh, Head::kEmbedder, 8);
  Batch b{random_matrix(4, 3, 9), Matrix()};
  const auto lg = grad(p, b, ContrastiveLoss{0.5});
  for (double v : lg.grad.flatten()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Grad, WrongHeadIsConfigError) {
  const std::vector<int> dims{3, 2};
  const ParamSet clf = init_mlp(dims, Activation::kRelu, Head::kClassifier, 0);
  Batch b{random_matrix(4, 3, 1), Matrix()};
  EXPECT_THROW(grad(clf, b, ContrastiveLoss{}), ConfigError);
}

TEST(Grad, UnknownLossNameIsConfigError) {
  EXPECT_THROW(loss_spec_from_name("mse"), ConfigError);
  EXPECT_TRUE(std::holds_alternative<ScanLoss>(loss_spec_from_name("scan")));
}

TEST(Grad, InvalidTargetsRejected) {
  const std::vector<int> dims{3, 2};
  const ParamSet p = init_mlp(dims, Activation::kRelu, Head::kClassifier, 0);
  Batch b{random_matrix(2, 3, 1), Matrix::Constant(2, 2, 0.7)};
  EXPECT_THROW(grad(p, b, CeLoss{}), ContractViolation);
}

class GradientOracle : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(GradientOracle, RegularizedCeMatchesFiniteDifferences) {
  const std::uint64_t seed = GetParam();
  for (Activation act : {Activation::kRelu, Activation::kTanh}) {
    const std::vector<int> dims{6, 10, 10, 4};
    const ParamSet p = init_mlp(dims, act, Head::kClassifier, seed);
    ASSERT_LE(p.parameter_count(), 500u);
    Batch b{random_matrix(8, 6, seed + 1), random_simplex_rows(8, 4, seed + 2)};
    const auto rep = finite_difference_check(p, b, CeLoss{1.0});
    EXPECT_LT(rep.max_rel_error, 1e-4) << to_string(act);
  }
}

TEST_P(GradientOracle, ContrastiveMatchesFiniteDifferences) {
  const std::uint64_t seed = GetParam();
  const std::vector<int> dims{5, 12, 12, 6};
  const ParamSet p = init_mlp(dims, Activation::kTanh, Head::kEmbedder, seed);
  ASSERT_LE(p.parameter_count(), 500u);
  Batch b{random_matrix(8, 5, seed + 3), Matrix()};
  const auto rep = finite_difference_check(p, b, ContrastiveLoss{0.5});
  EXPECT_LT(rep.max_rel_error, 1e-4);
}

TEST_P(GradientOracle, ScanMatchesFiniteDifferences) {
  const std::uint64_t seed = GetParam();
  const std::vector<int> dims{5, 12, 12, 3};
  const ParamSet p = init_mlp(dims, Activation::kRelu, Head::kClassifier, seed);
  ASSERT_LE(p.parameter_count(), 500u);
  // Scale the inputs so the argmax indicator is on for some pairs and off
  // for others.
  Batch b{random_matrix(10, 5, seed + 4, 3.0), Matrix()};
  ScanLoss s;
  s.entropy_weight = 5.0;
  for (int i = 0; i < 10; ++i) s.pairs.emplace_back(i, (i + 1 + static_cast<int>(seed)) % 10);
  const auto rep = finite_difference_check(p, b, s);
  EXPECT_LT(rep.max_rel_error, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Seeds, GradientOracle, ::testing::Values(0u, 1u, 2u));

TEST(SgdStep, ZeroLearningRateIsIdentity) {
  const std::vector<int> dims{3, 4, 2};
  ParamSet p = init_mlp(dims, Activation::kRelu, Head::kClassifier, 1);
  const ParamSet before = p;
  ParamSet g = init_mlp(dims, Activation::kRelu, Head::kClassifier, 2);
  OptimState st = OptimState::for_params(p, 0.0, 0.9, 5e-4);
  st.momentum_buffers = g.layers;  // arbitrary state
  sgd_step(p, g, st);
  EXPECT_EQ(p.flatten(), before.flatten());
}

TEST(SgdStep, PlainSgd) {
  const std::vector<int> dims{3, 2};
  ParamSet p = init_mlp(dims, Activation::kRelu, Head::kClassifier, 1);
  const auto p0 = p.flatten();
  const ParamSet g = init_mlp(dims, Activation::kRelu, Head::kClassifier, 2);
  const auto gf = g.flatten();
  OptimState st = OptimState::for_params(p, 0.1, 0.0, 0.0);
  sgd_step(p, g, st);
  const auto p1 = p.flatten();
  for (std::size_t i = 0; i < p0.size(); ++i) EXPECT_NEAR(p1[i], p0[i] - 0.1 * gf[i], 1e-15);
}

TEST(SgdStep, MomentumTwoStepsMoveByOnePointNine) {
  const std::vector<int> dims{3, 2};
  ParamSet p = init_mlp(dims, Activation::kRelu, Head::kClassifier, 1);
  const ParamSet g = init_mlp(dims, Activation::kRelu, Head::kClassifier, 2);
  const auto gf = g.flatten();
  OptimState st = OptimState::for_params(p, 0.1, 0.9, 0.0);
  sgd_step(p, g, st);
  const auto mid = p.flatten();
  sgd_step(p, g, st);
  const auto end = p.flatten();
  for (std::size_t i = 0; i < gf.size(); ++i) EXPECT_NEAR(mid[i] - end[i], 0.1 * 1.9 * gf[i], 1e-14);
}

TEST(SgdStep, WeightDecayIsCoupled) {
  ParamSet p = single_linear(1, 1);
  p.layers[0].weight(0, 0) = 2.0;
  ParamSet g = p.zeros_like();
  OptimState st = OptimState::for_params(p, 0.5, 0.0, 0.1);
  sgd_step(p, g, st);
  EXPECT_NEAR(p.layers[0].weight(0, 0), 2.0 - 0.5 * 0.1 * 2.0, 1e-15);
  EXPECT_NEAR(st.momentum_buffers[0].weight(0, 0), 0.2, 1e-15);
}

TEST(SgdStep, ShapeMismatchThrows) {
  const std::vector<int> a{3, 2};
  const std::vector<int> b{3, 4, 2};
  ParamSet p = init_mlp(a, Activation::kRelu, Head::kClassifier, 1);
  const ParamSet g = init_mlp(b, Activation::kRelu, Head::kClassifier, 1);
  OptimState st = OptimState::for_params(p, 0.1, 0.9, 0.0);
  EXPECT_THROW(sgd_step(p, g, st), ShapeError);
}

TEST(SgdStepProperty, ZeroLrIdentityForRandomState) {
  const std::vector<int> dims{4, 6, 3};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ParamSet p = init_mlp(dims, Activation::kTanh, Head::kClassifier, seed);
    const auto before = p.flatten();
    const ParamSet g = init_mlp(dims, Activation::kTanh, Head::kClassifier, seed + 50);
    OptimState st = OptimState::for_params(p, 0.0, 0.5, 0.3);
    for (int k = 0; k < 3; ++k) sgd_step(p, g, st);
    EXPECT_EQ(p.flatten(), before);
  }
}

TEST(OptimStateTest, ScheduleDropsAtConfiguredEpochs) {
  const std::vector<int> dims{2, 2};
  OptimState st = OptimState::for_params(
      init_mlp(dims, Activation::kRelu, Head::kClassifier, 0), 0.02, 0.9, 5e-4);
  st.schedule = {{0, 0.02}, {15, 0.002}};
  EXPECT_DOUBLE_EQ(st.lr_at(0), 0.02);
  EXPECT_DOUBLE_EQ(st.lr_at(14), 0.02);
  EXPECT_DOUBLE_EQ(st.lr_at(15), 0.002);
  st.set_epoch(20);
  EXPECT_DOUBLE_EQ(st.learning_rate, 0.002);
}

TEST(Argmax, TiesGoToLowestIndex) {
  Vector v(4);
  v << 0.1, 0.4, 0.4, 0.1;
  EXPECT_EQ(argmax(v), 1);
  Matrix m(2, 3);
  m << 1, 1, 1, 0, 2, 2;
  EXPECT_EQ(argmax_rows(m), (std::vector<int>{0, 1}));
}

TEST(Checkpoint, RoundTripIsExact) {
  const auto dir = testing::temp_dir("ckpt");
  const std::vector<int> dims{5, 7, 3};
  const ParamSet p = init_mlp(dims, Activation::kTanh, Head::kEmbedder, 77);
  save_paramset(dir / "p.json", p, RngPosition{123, 45});
  RngPosition pos;
  const ParamSet q = load_paramset(dir / "p.json", &pos);
  EXPECT_EQ(q.flatten(), p.flatten());
  EXPECT_EQ(q.activation, p.activation);
  EXPECT_EQ(q.head, p.head);
  EXPECT_EQ(pos.seed, 123u);
  EXPECT_EQ(pos.position, 45u);
}

TEST(Checkpoint, RejectsWrongFormat) {
  EXPECT_THROW(paramset_from_json(nlohmann::json{{"format", "other"}}), ParseError);
}

}  // namespace
}  // namespace propmix
