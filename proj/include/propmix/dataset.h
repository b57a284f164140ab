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

#ifndef PROPMIX_DATASET_H_
#define PROPMIX_DATASET_H_

// Labeled feature datasets and controlled label-noise injection.
//
// CSV layout: header `f0,...,f{d-1},true_label,given_label`, one sample per
// row, floats in shortest round-trip decimal. A sidecar `<file>.json` holds
// {name, N, d, classes, noise_spec}.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "propmix/backbone.h"

namespace propmix {

enum class NoiseKind { kSymmetric, kAsymmetric, kInstance };

std::string to_string(NoiseKind k);
NoiseKind noise_kind_from_string(const std::string& s);

using PairMap = std::vector<std::pair<int, int>>;  // source class -> target class

// "0:1,1:0" -> {{0,1},{1,0}}.
PairMap parse_pair_map(const std::string& text);

struct NoiseSpec {
  NoiseKind kind = NoiseKind::kSymmetric;
  double rate = 0.0;
  PairMap pairs;                      // asymmetric only
  std::optional<ParamSet> auxiliary;  // instance only
  std::uint64_t seed = 0;

  // Throws ConfigError on a missing pair map / auxiliary or rate outside [0,1].
  void validate(int num_classes) const;
  nlohmann::json to_json() const;  // auxiliary is summarized, not embedded
};

struct LabeledDataset {
  Matrix features;  // N x d
  std::vector<int> true_labels;
  std::vector<int> given_labels;
  int num_classes = 0;
  std::string name;
  nlohmann::json noise_spec;  // null for clean data

  std::size_t size() const { return true_labels.size(); }
  int dim() const { return static_cast<int>(features.cols()); }
  // Throws ConfigError when labels are out of range or lengths disagree.
  void validate() const;
  // Fraction of samples whose given label differs from the true label.
  double noise_fraction() const;
  Matrix one_hot_given() const;
};

bool operator==(const LabeledDataset& a, const LabeledDataset& b);

// Shortest round-trip decimal form of `v`.
std::string format_double(double v);

// Isotropic unit-variance Gaussian blobs. Class means sit at
// (separation / sqrt 2) * q_c for orthonormal q_c drawn from `seed`, so every
// pair of means is exactly `separation` apart. `sample_stream` selects an
// independent draw of points around the same means (0 = train, 1 = test).
LabeledDataset make_synthetic(int classes, int per_class, int dim, double separation,
                              std::uint64_t seed, std::uint64_t sample_stream = 0);

void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds);
LabeledDataset load_dataset(const std::filesystem::path& path);

// Per-sample Bernoulli(rate) flip to a uniformly chosen wrong class.
LabeledDataset inject_symmetric(const LabeledDataset& ds, double rate, std::uint64_t seed);
// Samples of a mapped source class flip to its target with probability rate.
LabeledDataset inject_asymmetric(const LabeledDataset& ds, const PairMap& pairs, double rate,
                                 std::uint64_t seed);
// Flips the ceil(rate * N) samples on which `auxiliary` is most confident in
// a wrong class to that class. Equal confidences are ordered by a hash of
// (seed, index).
LabeledDataset inject_instance(const LabeledDataset& ds, const ParamSet& auxiliary,
                               double rate, std::uint64_t seed);
LabeledDataset inject_noise(const LabeledDataset& ds, const NoiseSpec& spec);

struct TransitionMatrix {
  Eigen::MatrixXd counts;         // [true class][given class]
  Eigen::MatrixXd probabilities;  // row-normalized; undefined rows are NaN
  std::vector<bool> row_defined;
};

TransitionMatrix audit_transition(const LabeledDataset& ds);

// Analytic symmetric-noise transition matrix: 1-rate on the diagonal,
// rate/(C-1) elsewhere.
Eigen::MatrixXd symmetric_transition(int classes, double rate);

}  // namespace propmix

#endif  // PROPMIX_DATASET_H_
