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

#ifndef PROPMIX_BACKBONE_H_
#define PROPMIX_BACKBONE_H_

// Feed-forward classifier / encoder with exact gradients and SGD-momentum.
//
// Layout: a chain of dense layers. Hidden layers apply `activation`; the last
// layer is linear. A classifier head emits logits, an embedder head emits
// rows rescaled to unit Euclidean norm.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace propmix {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Activation { kRelu, kTanh };
enum class Head { kClassifier, kEmbedder };

std::string to_string(Activation a);
std::string to_string(Head h);
Activation activation_from_string(const std::string& s);
Head head_from_string(const std::string& s);

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out

  int in() const { return static_cast<int>(weight.cols()); }
  int out() const { return static_cast<int>(weight.rows()); }
};

struct ParamSet {
  std::vector<DenseLayer> layers;
  Activation activation = Activation::kRelu;
  Head head = Head::kClassifier;

  int input_dim() const;
  int output_dim() const;
  std::size_t parameter_count() const;
  // Throws ShapeError if consecutive layers do not chain.
  void validate() const;

  // Same architecture, every entry zero.
  ParamSet zeros_like() const;

  // Flat views in layer order (weight row-major, then bias). Used by the
  // finite-difference harness and checkpoints.
  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> values);
};

// Gradients share the parameter layout.
using Gradients = ParamSet;

// dims = {in, hidden..., out}. Weights and biases are drawn from
// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
ParamSet init_mlp(std::span<const int> dims, Activation activation, Head head,
                  std::uint64_t seed);

struct OptimState {
  std::vector<DenseLayer> momentum_buffers;
  double learning_rate = 0.02;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  // (epoch, lr) drop points; the last point with epoch <= e wins.
  std::vector<std::pair<int, double>> schedule;

  static OptimState for_params(const ParamSet& params, double learning_rate,
                               double momentum, double weight_decay);
  double lr_at(int epoch) const;
  void set_epoch(int epoch) { learning_rate = lr_at(epoch); }
};

// Soft-label minibatch. Every target row is a probability vector.
struct Batch {
  Matrix features;
  Matrix targets;

  void validate() const;
};

// Output of the network head. For classifiers: logits. For embedders: the
// unit-normalized embedding.
Matrix forward(const ParamSet& params, const Matrix& features);

Matrix softmax(const Matrix& logits);

// Mean over rows of -sum_c target * log(max(prob, 1e-12)).
double cross_entropy(const Matrix& probs, const Matrix& targets);

inline constexpr double kLogClamp = 1e-12;

// Loss selectors understood by `grad`.
struct CeLoss {
  // Weight of the KL(uniform || batch-mean prediction) regularizer.
  double reg_weight = 0.0;
};
struct ContrastiveLoss {
  // Rows i and (i + B/2) mod B of the batch are positive pairs.
  double temperature = 0.5;
};
struct ScanLoss {
  // Pairs (anchor row, neighbor row) inside the batch.
  std::vector<std::pair<int, int>> pairs;
  double entropy_weight = 5.0;
};
using LossSpec = std::variant<CeLoss, ContrastiveLoss, ScanLoss>;

// Parses "ce", "contrastive" or "scan" into a default-valued spec.
LossSpec loss_spec_from_name(const std::string& name);

struct LossAndGrad {
  double loss = 0.0;
  Gradients grad;
};

// Exact analytic gradient of the selected loss at `params`.
LossAndGrad grad(const ParamSet& params, const Batch& batch, const LossSpec& loss);

// Evaluates only the loss (same definitions as `grad`).
double loss_value(const ParamSet& params, const Batch& batch, const LossSpec& loss);

// buffer <- momentum * buffer + grad + weight_decay * param
// param  <- param - lr * buffer
void sgd_step(ParamSet& params, const Gradients& grads, OptimState& state);

// Index of the largest entry; ties go to the lowest index.
int argmax(const Eigen::Ref<const Vector>& v);
std::vector<int> argmax_rows(const Matrix& m);

}  // namespace propmix

#endif  // PROPMIX_BACKBONE_H_
