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

#ifndef PROPMIX_SSL_PRETRAIN_H_
#define PROPMIX_SSL_PRETRAIN_H_

// Label-free pre-training: an embedder trained with NT-Xent on pairs of
// augmented views, K-NN mining in its embedding space, then a cluster head
// trained with the SCAN objective while gradients keep flowing into the
// shared trunk.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "propmix/backbone.h"
#include "propmix/losses.h"

namespace propmix {

enum class AugmentMode { kStandard, kStrong };

// Feature-space augmentation. Standard: additive N(0, sigma^2) jitter per
// coordinate. Strong: jitter, then a cyclic run of round(mask_fraction * d)
// consecutive coordinates set to zero (a cutout analog).
struct AugmentSpec {
  AugmentMode mode = AugmentMode::kStandard;
  double jitter_sigma = 0.0;
  double mask_fraction = 0.0;

  void validate() const;
  AugmentSpec as_mode(AugmentMode m) const {
    AugmentSpec s = *this;
    s.mode = m;
    return s;
  }
};

Vector augment(const Eigen::Ref<const Vector>& x, const AugmentSpec& spec, std::uint64_t seed);
// Row i is augmented with derive_seed(seed, "row", i).
Matrix augment_rows(const Matrix& x, const AugmentSpec& spec, std::uint64_t seed);

struct ContrastiveConfig {
  double temperature = 0.5;
  int batch_size = 128;
  int epochs = 30;
  int embed_dim = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  AugmentSpec augment{AugmentMode::kStrong, 0.5, 0.25};

  void validate() const;
};

struct ScanConfig {
  double entropy_weight = 5.0;
  int epochs = 20;
  int neighbors = 20;
  int batch_size = 128;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  AugmentSpec augment{AugmentMode::kStandard, 0.3, 0.0};

  void validate() const;
};

// Row-major N x K neighbor indices by cosine similarity.
struct NeighborTable {
  int n = 0;
  int k = 0;
  std::vector<int> indices;

  std::span<const int> row(int i) const {
    return {indices.data() + static_cast<std::size_t>(i) * k, static_cast<std::size_t>(k)};
  }
  // Throws ContractViolation on self-neighbors or out-of-range entries.
  void validate() const;
  std::vector<std::pair<int, int>> pairs() const;
};

// K most cosine-similar rows per row, excluding self; ties go to the lower
// index. Throws ConfigError unless 1 <= k < N.
NeighborTable mine_knn(const Matrix& embeddings, int k);

// SCAN objective over every (i, j in N_i) pair of the table.
double scan_loss(const Matrix& cluster_probs, const NeighborTable& neighbors,
                 double entropy_weight);

struct PretrainResult {
  ParamSet encoder;        // trunk + embedding head
  ParamSet cluster_model;  // same trunk + cluster head, a classifier
  NeighborTable neighbors;
  std::vector<double> contrastive_history;  // mean loss per epoch
  std::vector<double> scan_history;
};

// `hidden` are the trunk widths shared with the downstream classifier.
// Labels never reach this function.
PretrainResult pretrain(const Matrix& features, int num_clusters, std::span<const int> hidden,
                        Activation activation, const ContrastiveConfig& cc,
                        const ScanConfig& sc, std::uint64_t seed);

// Fraction of (i, j in N_i) pairs with labels[i] == labels[j]. Evaluation only.
double knn_purity(const NeighborTable& neighbors, std::span<const int> labels);

// Best one-to-one cluster -> class mapping (Hungarian), returned as
// mapping[cluster] = class.
std::vector<int> match_clusters(std::span<const int> clusters, std::span<const int> labels,
                                int num_classes);

nlohmann::json pretrain_to_json(const PretrainResult& r);
PretrainResult pretrain_from_json(const nlohmann::json& j);

}  // namespace propmix

#endif  // PROPMIX_SSL_PRETRAIN_H_
