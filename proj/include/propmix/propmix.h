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

#ifndef PROPMIX_PROPMIX_H_
#define PROPMIX_PROPMIX_H_

// The supervised stage: warm-up, per-epoch two-stage filtering, relabeling of
// easy noisy samples, proportional MixUp over clean + easy samples, and the
// regularized CE update, for a co-trained pair of networks.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "propmix/backbone.h"
#include "propmix/dataset.h"
#include "propmix/gmm_filter.h"
#include "propmix/losses.h"
#include "propmix/ssl_pretrain.h"

namespace propmix {

struct MixConfig {
  int augment_count = 2;            // M
  double sharpen_temperature = 0.5;  // T
  double mixup_alpha = 4.0;
  double reg_weight = 1.0;  // lambda_r
  int warmup_epochs = 10;
  int epochs = 30;
  int batch_size = 64;
  // Strong augmentation once the estimated noise rate |U|/|D| exceeds this.
  double strong_aug_trigger = 0.5;
  AugmentSpec augment{AugmentMode::kStandard, 0.3, 0.25};
  // When false every noisy sample is treated as easy (ablation).
  bool filter_hard = true;

  void validate() const;
};

struct Network {
  ParamSet params;
  OptimState optim;
};

struct CoModels {
  Network a;
  Network b;

  const Network& net(int k) const { return k == 0 ? a : b; }
  Network& net(int k) { return k == 0 ? a : b; }
};

struct EpochStats {
  int epoch = 0;
  double test_acc = 0.0;  // filled in by the caller that owns the test set
  double est_noise_rate = 0.0;
  std::size_t n_clean = 0;
  std::size_t n_easy = 0;
  std::size_t n_hard = 0;
  std::size_t pool_size = 0;
  bool strong_augmentation = false;
  FilterDiagnostics filter;
  double train_loss = 0.0;

  // |U_E| / (|X| + |U_E|); 0 when both are empty.
  double zeta() const;
};

// Which samples fed gradient steps in an epoch, for auditing.
struct ContributionLog {
  // Source dataset indices (own and mixing partner) per network.
  std::array<std::vector<int>, 2> contributors;
  std::array<Partition, 2> partitions;
};

// Builds two independently initialized classifiers with identical
// architecture. With `init`, every layer but the last is copied from it.
CoModels make_co_models(int input_dim, std::span<const int> hidden, int num_classes,
                        Activation activation, const std::optional<ParamSet>& init,
                        double learning_rate, double momentum, double weight_decay,
                        std::uint64_t seed);

// Sets each network's learning rate for `epoch` from its schedule.
void set_epoch(CoModels& models, int epoch);

// Plain CE on the given labels, both networks independently.
CoModels warmup(CoModels models, const LabeledDataset& ds, int epochs, int batch_size,
                std::uint64_t seed, int first_epoch = 0);

// Plain CE training of a single network on `labels` (baselines).
Network train_ce_epoch(Network net, const Matrix& features, std::span<const int> labels,
                       int num_classes, int batch_size, std::uint64_t seed);

Vector temp_sharpen(const Eigen::Ref<const Vector>& p, double temperature);
Vector refine_clean_label(const Eigen::Ref<const Vector>& y, double w,
                          const Eigen::Ref<const Vector>& p_b, double temperature);

// Mean softmax over every view and both networks.
Vector avg_prediction(const CoModels& models, const Matrix& views);

struct MixedSet {
  Matrix features;
  Matrix targets;
  std::vector<std::size_t> partner;  // sigma(i)
  std::vector<double> lambda;        // lambda' per row
};

// MixUp of the pool with a seeded shuffle of itself. lambda ~ Beta(alpha,
// alpha), lambda' = max(lambda, 1 - lambda). `forced_lambda` bypasses the draw.
MixedSet proportional_mixup(const Matrix& features, const Matrix& targets, double alpha,
                            std::uint64_t seed, std::optional<double> forced_lambda = std::nullopt);

// Per-sample CE of the given labels under `params` on clean inputs.
std::vector<double> per_sample_loss(const ParamSet& params, const LabeledDataset& ds);

// Partition network `k` trains on, computed from the peer's losses and
// confidences.
Partition form_partition(const ParamSet& peer, const LabeledDataset& ds, const MixConfig& cfg,
                         const FilterConfig& fcfg);

// One epoch of co-training. Network k trains on the partition computed from
// network 1-k; both pools are built from the models as they were at epoch
// start.
std::pair<CoModels, EpochStats> train_epoch(CoModels models, const LabeledDataset& ds,
                                            const MixConfig& cfg, const FilterConfig& fcfg,
                                            int epoch, std::uint64_t seed,
                                            ContributionLog* log = nullptr);

// Ensemble predictions: argmax of the mean softmax (ties to the lowest class).
std::vector<int> predict(const CoModels& models, const Matrix& features);
double evaluate(const CoModels& models, const LabeledDataset& test);
double accuracy(std::span<const int> preds, std::span<const int> labels);

}  // namespace propmix

#endif  // PROPMIX_PROPMIX_H_
