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
#include <numbers>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "propmix/dataset.h"
#include "propmix/error.h"
#include "propmix/rng.h"
#include "propmix/ssl_pretrain.h"
#include "test_util.h"

namespace propmix {
namespace {

using testing::random_matrix;

TEST(Augment, ZeroSpecIsIdentity) {
  const Vector x = random_matrix(1, 12, 3).row(0).transpose();
  for (AugmentMode m : {AugmentMode::kStandard, AugmentMode::kStrong}) {
    const AugmentSpec spec{m, 0.0, 0.0};
    EXPECT_EQ(augment(x, spec, 17), x);
  }
}

TEST(Augment, StrongMasksEightCyclicCoordinates) {
  const Vector x = Vector::Ones(32);
  const AugmentSpec spec{AugmentMode::kStrong, 0.0, 0.25};
  std::set<int> starts;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Vector y = augment(x, spec, seed);
    std::vector<int> zeros;
    for (int k = 0; k < 32; ++k) {
      if (y[k] == 0.0) zeros.push_back(k);
      else EXPECT_EQ(y[k], 1.0);
    }
    ASSERT_EQ(zeros.size(), 8u);
    int start = -1;
    for (int k : zeros) {
      if (y[(k + 31) % 32] != 0.0) start = k;
    }
    ASSERT_GE(start, 0);
    for (int k = 0; k < 8; ++k) EXPECT_EQ(y[(start + k) % 32], 0.0);
    starts.insert(start);
  }
  EXPECT_GT(starts.size(), 1u);
}

TEST(Augment, StandardIgnoresMask) {
  const Vector x = Vector::Ones(10);
  const AugmentSpec spec{AugmentMode::kStandard, 0.0, 0.5};
  EXPECT_EQ(augment(x, spec, 4), x);
}

TEST(Augment, DistinctSeedsGiveDistinctViews) {
  const Vector x = Vector::Zero(16);
  const AugmentSpec spec{AugmentMode::kStandard, 0.5, 0.0};
  const Vector a = augment(x, spec, 1);
  const Vector b = augment(x, spec, 2);
  EXPECT_NE(a, b);
  EXPECT_EQ(a, augment(x, spec, 1));
}

TEST(Augment, JitterHasRequestedSpread) {
  const Vector x = Vector::Zero(20000);
  const AugmentSpec spec{AugmentMode::kStandard, 0.3, 0.0};
  const Vector y = augment(x, spec, 9);
  const double var = y.squaredNorm() / static_cast<double>(y.size());
  // Sample variance of 20000 normals: relative sd sqrt(2/n) ~ 1%.
  EXPECT_NEAR(std::sqrt(var), 0.3, 0.3 * 0.03);
}

TEST(Augment, RowsUseDerivedSeeds) {
  const Matrix x = random_matrix(4, 6, 2);
  const AugmentSpec spec{AugmentMode::kStrong, 0.2, 0.3};
  const Matrix y = augment_rows(x, spec, 77);
  for (int r = 0; r < 4; ++r) {
    const Vector expect = augment(x.row(r).transpose(), spec, derive_seed(77, "row", r));
    EXPECT_EQ(Vector(y.row(r).transpose()), expect);
  }
}

TEST(AugmentSpecTest, RejectsBadValues) {
  EXPECT_THROW((AugmentSpec{AugmentMode::kStrong, 0.1, 1.0}.validate()), ConfigError);
  EXPECT_THROW((AugmentSpec{AugmentMode::kStrong, -0.1, 0.0}.validate()), ConfigError);
  EXPECT_NO_THROW((AugmentSpec{AugmentMode::kStrong, 0.0, 0.99}.validate()));
}

Matrix angle_vectors(std::initializer_list<double> degrees) {
  Matrix m(static_cast<int>(degrees.size()), 2);
  int r = 0;
  for (double deg : degrees) {
    const double a = deg * std::numbers::pi / 180.0;
    m(r, 0) = std::cos(a);
    m(r, 1) = std::sin(a);
    ++r;
  }
  return m;
}

TEST(MineKnn, HandComputedAngles) {
  const NeighborTable t = mine_knn(angle_vectors({0.0, 10.0, 90.0}), 1);
  EXPECT_EQ(t.n, 3);
  EXPECT_EQ(t.k, 1);
  EXPECT_EQ(t.indices, (std::vector<int>{1, 0, 1}));
}

TEST(MineKnn, DuplicatesAreMutualTopNeighbors) {
  Matrix e = angle_vectors({0.0, 45.0, 45.0, 120.0, 0.0});
  const NeighborTable t = mine_knn(e, 2);
  EXPECT_EQ(t.row(1)[0], 2);
  EXPECT_EQ(t.row(2)[0], 1);
  EXPECT_EQ(t.row(0)[0], 4);
  EXPECT_EQ(t.row(4)[0], 0);
}

TEST(MineKnn, TiesGoToLowerIndex) {
  // Rows 1, 2 and 3 are identical, so row 0 sees a three-way tie.
  Matrix e = angle_vectors({0.0, 30.0, 30.0, 30.0});
  const NeighborTable t = mine_knn(e, 2);
  EXPECT_EQ(t.row(0)[0], 1);
  EXPECT_EQ(t.row(0)[1], 2);
  EXPECT_EQ(t.row(3)[0], 1);
  EXPECT_EQ(t.row(3)[1], 2);
}

TEST(MineKnn, KMustBeBelowN) {
  const Matrix e = random_matrix(5, 3, 1);
  EXPECT_THROW(mine_knn(e, 5), ConfigError);
  EXPECT_THROW(mine_knn(e, 0), ConfigError);
  EXPECT_NO_THROW(mine_knn(e, 4));
}

TEST(MineKnnProperty, NoSelfNeighborsAndInRange) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const NeighborTable t = mine_knn(random_matrix(60, 4, seed), 7);
    EXPECT_NO_THROW(t.validate());
    for (int i = 0; i < t.n; ++i) {
      std::set<int> row(t.row(i).begin(), t.row(i).end());
      EXPECT_EQ(row.size(), 7u);
      EXPECT_EQ(row.count(i), 0u);
    }
  }
}

TEST(MineKnnProperty, InvariantToRowScaling) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Matrix e = random_matrix(40, 5, seed);
    Matrix scaled = e;
    const Matrix s = random_matrix(40, 1, seed + 100);
    for (int r = 0; r < 40; ++r) scaled.row(r) *= 0.01 + 10.0 * std::abs(s(r, 0));
    EXPECT_EQ(mine_knn(e, 6).indices, mine_knn(scaled, 6).indices);
  }
}

TEST(MineKnnProperty, MatchesBruteForceOracle) {
  const Matrix e = random_matrix(70, 3, 8);
  const NeighborTable t = mine_knn(e, 4);
  for (int i = 0; i < 70; ++i) {
    std::vector<std::pair<double, int>> sims;
    for (int j = 0; j < 70; ++j) {
      if (j == i) continue;
      sims.emplace_back(-e.row(i).dot(e.row(j)) / (e.row(i).norm() * e.row(j).norm()), j);
    }
    std::sort(sims.begin(), sims.end());
    for (int k = 0; k < 4; ++k) EXPECT_EQ(t.row(i)[k], sims[k].second);
  }
}

TEST(NeighborTableTest, ValidateRejectsSelfAndRange) {
  NeighborTable t{3, 1, {1, 2, 0}};
  EXPECT_NO_THROW(t.validate());
  t.indices = {0, 1, 0};
  EXPECT_THROW(t.validate(), ContractViolation);
  t.indices = {1, 3, 0};
  EXPECT_THROW(t.validate(), ContractViolation);
}

TEST(ScanTable, MatchesPairOverload) {
  const Matrix p = testing::random_simplex_rows(6, 3, 4);
  const NeighborTable t = mine_knn(random_matrix(6, 3, 5), 2);
  EXPECT_DOUBLE_EQ(scan_loss(p, t, 5.0), scan_loss(p, t.pairs(), 5.0));
  EXPECT_EQ(t.pairs().size(), 12u);
}

ContrastiveConfig small_contrastive(int epochs) {
  ContrastiveConfig cc;
  cc.epochs = epochs;
  cc.batch_size = 32;
  cc.embed_dim = 8;
  return cc;
}

ScanConfig small_scan(int epochs) {
  ScanConfig sc;
  sc.epochs = epochs;
  sc.neighbors = 5;
  sc.batch_size = 32;
  return sc;
}

TEST(Pretrain, ZeroEpochsReturnsInitialState) {
  const LabeledDataset ds = make_synthetic(3, 10, 6, 4.0, 1);
  const std::vector<int> hidden{8};
  const PretrainResult r = pretrain(ds.features, 3, hidden, Activation::kRelu,
                                    small_contrastive(0), small_scan(0), 5);
  EXPECT_TRUE(r.contrastive_history.empty());
  EXPECT_TRUE(r.scan_history.empty());
  EXPECT_EQ(r.neighbors.n, 30);
  EXPECT_EQ(r.neighbors.k, 5);
  EXPECT_EQ(r.encoder.head, Head::kEmbedder);
  EXPECT_EQ(r.cluster_model.head, Head::kClassifier);
  EXPECT_EQ(r.cluster_model.output_dim(), 3);
  // The untrained encoder's table is what mining on its embeddings gives.
  EXPECT_EQ(r.neighbors.indices, mine_knn(forward(r.encoder, ds.features), 5).indices);
  // Both models share the trunk.
  for (std::size_t l = 0; l + 1 < r.encoder.layers.size(); ++l) {
    EXPECT_EQ(r.encoder.layers[l].weight, r.cluster_model.layers[l].weight);
    EXPECT_EQ(r.encoder.layers[l].bias, r.cluster_model.layers[l].bias);
  }
}

TEST(Pretrain, BatchBelowTwoIsConfigError) {
  const LabeledDataset ds = make_synthetic(2, 5, 4, 4.0, 1);
  const std::vector<int> hidden{4};
  ContrastiveConfig cc = small_contrastive(1);
  cc.batch_size = 1;
  EXPECT_THROW(pretrain(ds.features, 2, hidden, Activation::kRelu, cc, small_scan(1), 0),
               ConfigError);
}

TEST(Pretrain, WellSeparatedBlobsGiveHighPurity) {
  const LabeledDataset ds = make_synthetic(4, 60, 16, 10.0, 2);
  const std::vector<int> hidden{32};
  const PretrainResult r = pretrain(ds.features, 4, hidden, Activation::kRelu,
                                    small_contrastive(15), small_scan(5), 11);
  EXPECT_GT(knn_purity(r.neighbors, ds.true_labels), 0.9);
  ASSERT_EQ(r.contrastive_history.size(), 15u);
  EXPECT_LT(r.contrastive_history.back(), r.contrastive_history.front());
  ASSERT_EQ(r.scan_history.size(), 5u);
}

TEST(PretrainProperty, BitwiseDeterministic) {
  const LabeledDataset ds = make_synthetic(3, 20, 8, 4.0, 3);
  const std::vector<int> hidden{12};
  auto run = [&] {
    return pretrain(ds.features, 3, hidden, Activation::kTanh, small_contrastive(3),
                    small_scan(2), 21);
  };
  const PretrainResult a = run();
  const PretrainResult b = run();
  EXPECT_EQ(a.encoder.flatten(), b.encoder.flatten());
  EXPECT_EQ(a.cluster_model.flatten(), b.cluster_model.flatten());
  EXPECT_EQ(a.neighbors.indices, b.neighbors.indices);
  EXPECT_EQ(a.contrastive_history, b.contrastive_history);
  EXPECT_EQ(a.scan_history, b.scan_history);
  const PretrainResult c = pretrain(ds.features, 3, hidden, Activation::kTanh,
                                    small_contrastive(3), small_scan(2), 22);
  EXPECT_NE(a.encoder.flatten(), c.encoder.flatten());
}

TEST(Pretrain, JsonRoundTrip) {
  const LabeledDataset ds = make_synthetic(2, 8, 4, 4.0, 1);
  const std::vector<int> hidden{6};
  const PretrainResult r = pretrain(ds.features, 2, hidden, Activation::kRelu,
                                    small_contrastive(1), small_scan(1), 3);
  const PretrainResult back = pretrain_from_json(nlohmann::json::parse(pretrain_to_json(r).dump()));
  EXPECT_EQ(back.encoder.flatten(), r.encoder.flatten());
  EXPECT_EQ(back.cluster_model.flatten(), r.cluster_model.flatten());
  EXPECT_EQ(back.encoder.head, Head::kEmbedder);
  EXPECT_EQ(back.neighbors.indices, r.neighbors.indices);
  EXPECT_EQ(back.contrastive_history, r.contrastive_history);
}

TEST(KnnPurity, CountsAgreeingPairs) {
  const NeighborTable t{4, 1, {1, 0, 3, 0}};
  const std::vector<int> labels{0, 0, 1, 2};
  EXPECT_DOUBLE_EQ(knn_purity(t, labels), 0.5);
}

TEST(MatchClusters, RecoversPermutation) {
  const std::vector<int> clusters{2, 2, 0, 0, 1, 1, 1};
  const std::vector<int> labels{0, 0, 1, 1, 2, 2, 0};
  EXPECT_EQ(match_clusters(clusters, labels, 3), (std::vector<int>{1, 2, 0}));
}

TEST(MatchClusters, OneToOneEvenWhenMajoritiesCollide) {
  // Clusters 0 and 1 both have class 0 as majority; the assignment that
  // maximizes total agreement maps 0->0 and 1->1.
  const std::vector<int> clusters{0, 0, 0, 1, 1, 1};
  const std::vector<int> labels{0, 0, 0, 0, 0, 1};
  EXPECT_EQ(match_clusters(clusters, labels, 2), (std::vector<int>{0, 1}));
}

}  // namespace
}  // namespace propmix
