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

#include "propmix/backbone.h"

#include <algorithm>
#include <cmath>

#include "propmix/error.h"
#include "propmix/losses.h"
#include "propmix/rng.h"

namespace propmix {

std::string to_string(Activation a) { return a == Activation::kRelu ? "relu" : "tanh"; }
std::string to_string(Head h) { return h == Head::kClassifier ? "classifier" : "embedder"; }

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation '" + s + "' (expected relu|tanh)");
}

Head head_from_string(const std::string& s) {
  if (s == "classifier") return Head::kClassifier;
  if (s == "embedder") return Head::kEmbedder;
  throw ConfigError("unknown head '" + s + "' (expected classifier|embedder)");
}

int ParamSet::input_dim() const { return layers.empty() ? 0 : layers.front().in(); }
int ParamSet::output_dim() const { return layers.empty() ? 0 : layers.back().out(); }

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

void ParamSet::validate() const {
  if (layers.empty()) throw ShapeError("parameter set has no layers");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (layers[k].bias.size() != layers[k].weight.rows()) {
      throw ShapeError("layer " + std::to_string(k) + ": bias length " +
                       std::to_string(layers[k].bias.size()) + " != out " +
                       std::to_string(layers[k].out()));
    }
    if (k > 0 && layers[k].in() != layers[k - 1].out()) {
      throw ShapeError("layer " + std::to_string(k) + " expects " +
                       std::to_string(layers[k].in()) + " inputs, previous layer emits " +
                       std::to_string(layers[k - 1].out()));
    }
  }
}

ParamSet ParamSet::zeros_like() const {
  ParamSet z = *this;
  for (auto& l : z.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  return z;
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& l : layers) {
    flat.insert(flat.end(), l.weight.data(), l.weight.data() + l.weight.size());
    flat.insert(flat.end(), l.bias.data(), l.bias.data() + l.bias.size());
  }
  return flat;
}

void ParamSet::assign_flat(std::span<const double> values) {
  if (values.size() != parameter_count()) {
    throw ShapeError("flat parameter vector has " + std::to_string(values.size()) +
                     " entries, expected " + std::to_string(parameter_count()));
  }
  std::size_t pos = 0;
  for (auto& l : layers) {
    std::copy_n(values.begin() + pos, l.weight.size(), l.weight.data());
    pos += l.weight.size();
    std::copy_n(values.begin() + pos, l.bias.size(), l.bias.data());
    pos += l.bias.size();
  }
}

ParamSet init_mlp(std::span<const int> dims, Activation activation, Head head,
                  std::uint64_t seed) {
  if (dims.size() < 2) throw ConfigError("an MLP needs at least input and output dims");
  for (int d : dims) {
    if (d < 1) throw ConfigError("layer widths must be positive");
  }
  ParamSet p;
  p.activation = activation;
  p.head = head;
  Rng rng(derive_seed(seed, "init_mlp"));
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    const int in = dims[k];
    const int out = dims[k + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    DenseLayer layer{Matrix(out, in), Vector(out)};
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
      layer.weight.data()[i] = rng.uniform(-bound, bound);
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = rng.uniform(-bound, bound);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

OptimState OptimState::for_params(const ParamSet& params, double learning_rate,
                                  double momentum, double weight_decay) {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  OptimState s;
  s.momentum_buffers = params.zeros_like().layers;
  s.learning_rate = learning_rate;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  s.schedule = {{0, learning_rate}};
  return s;
}

double OptimState::lr_at(int epoch) const {
  double lr = schedule.empty() ? learning_rate : schedule.front().second;
  for (const auto& [e, value] : schedule) {
    if (e <= epoch) lr = value;
  }
  return lr;
}

void Batch::validate() const {
  if (targets.size() == 0) return;
  if (targets.rows() != features.rows()) {
    throw ShapeError("batch has " + std::to_string(features.rows()) + " feature rows but " +
                     std::to_string(targets.rows()) + " target rows");
  }
  for (Eigen::Index r = 0; r < targets.rows(); ++r) {
    if ((targets.row(r).array() < 0.0).any() ||
        std::abs(targets.row(r).sum() - 1.0) > 1e-9) {
      throw ContractViolation("target row " + std::to_string(r) +
                              " is not a probability vector");
    }
  }
}

namespace {

struct ForwardCache {
  std::vector<Matrix> inputs;  // input to layer k
  Matrix raw;                  // last layer output before normalization
  Vector norms;                // embedder only
  Matrix out;
};

void apply_activation(Activation a, Matrix& m) {
  if (a == Activation::kRelu) {
    m = m.cwiseMax(0.0);
  } else {
    m = m.array().tanh().matrix();
  }
}

ForwardCache forward_cached(const ParamSet& params, const Matrix& features) {
  params.validate();
  if (features.cols() != params.input_dim()) {
    throw ShapeError("features have " + std::to_string(features.cols()) +
                     " columns, network expects " + std::to_string(params.input_dim()));
  }
  ForwardCache c;
  c.inputs.reserve(params.layers.size());
  Matrix h = features;
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const auto& layer = params.layers[k];
    c.inputs.push_back(h);
    Matrix z = h * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    if (k + 1 < params.layers.size()) apply_activation(params.activation, z);
    h = std::move(z);
  }
  c.raw = std::move(h);
  if (params.head == Head::kEmbedder) {
    c.norms = c.raw.rowwise().norm().cwiseMax(kLogClamp);
    c.out = c.norms.cwiseInverse().asDiagonal() * c.raw;
  } else {
    c.out = c.raw;
  }
  return c;
}

Gradients backward(const ParamSet& params, const ForwardCache& c, const Matrix& d_out) {
  Matrix d;
  if (params.head == Head::kEmbedder) {
    // z = h / |h|  =>  dL/dh = (g - z (z.g)) / |h|
    const Vector proj = (d_out.array() * c.out.array()).rowwise().sum();
    d = c.norms.cwiseInverse().asDiagonal() * (d_out - proj.asDiagonal() * c.out);
  } else {
    d = d_out;
  }
  Gradients g = params.zeros_like();
  for (std::size_t k = params.layers.size(); k-- > 0;) {
    const Matrix& in = c.inputs[k];
    g.layers[k].weight.noalias() = d.transpose() * in;
    g.layers[k].bias = d.colwise().sum().transpose();
    if (k == 0) break;
    Matrix d_in = d * params.layers[k].weight;
    // `in` is the activated output of layer k-1.
    if (params.activation == Activation::kRelu) {
      d_in = (in.array() > 0.0).select(d_in, 0.0);
    } else {
      d_in = (d_in.array() * (1.0 - in.array().square())).matrix();
    }
    d = std::move(d_in);
  }
  return g;
}

struct LossEval {
  double loss;
  Matrix d_out;
};

LossEval evaluate_loss(const ParamSet& params, const ForwardCache& c, const Batch& batch,
                       const LossSpec& spec, bool want_grad) {
  return std::visit(
      [&](const auto& s) -> LossEval {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, CeLoss>) {
          if (params.head != Head::kClassifier) {
            throw ConfigError("CE loss needs a classifier head");
          }
          if (batch.targets.rows() != c.out.rows() || batch.targets.cols() != c.out.cols()) {
            throw ShapeError("CE targets shape does not match logits");
          }
          const Matrix probs = softmax(c.out);
          LossEval e{regularized_loss(probs, batch.targets, s.reg_weight), {}};
          if (want_grad) e.d_out = regularized_loss_grad_logits(probs, batch.targets, s.reg_weight);
          return e;
        } else if constexpr (std::is_same_v<T, ContrastiveLoss>) {
          if (params.head != Head::kEmbedder) {
            throw ConfigError("contrastive loss needs an embedder head");
          }
          LossEval e{0.0, {}};
          if (want_grad) {
            e.loss = contrastive_loss_grad(c.out, s.temperature, &e.d_out);
          } else {
            e.loss = contrastive_loss(c.out, s.temperature);
          }
          return e;
        } else {
          if (params.head != Head::kClassifier) {
            throw ConfigError("SCAN loss needs a classifier (cluster) head");
          }
          const Matrix probs = softmax(c.out);
          LossEval e{0.0, {}};
          if (want_grad) {
            Matrix d_probs;
            e.loss = scan_loss_grad(probs, s.pairs, s.entropy_weight, &d_probs);
            e.d_out = softmax_backward(probs, d_probs);
          } else {
            e.loss = scan_loss(probs, s.pairs, s.entropy_weight);
          }
          return e;
        }
      },
      spec);
}

}  // namespace

Matrix forward(const ParamSet& params, const Matrix& features) {
  return forward_cached(params, features).out;
}

Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - m).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

double cross_entropy(const Matrix& probs, const Matrix& targets) {
  if (probs.rows() != targets.rows() || probs.cols() != targets.cols()) {
    throw ShapeError("cross_entropy: probs and targets differ in shape");
  }
  if (probs.rows() == 0) return 0.0;
  const double total =
      -(targets.array() * probs.array().max(kLogClamp).log()).sum();
  return total / static_cast<double>(probs.rows());
}

LossSpec loss_spec_from_name(const std::string& name) {
  if (name == "ce") return CeLoss{};
  if (name == "contrastive") return ContrastiveLoss{};
  if (name == "scan") return ScanLoss{};
  throw ConfigError("unknown loss '" + name + "' (expected ce|contrastive|scan)");
}

LossAndGrad grad(const ParamSet& params, const Batch& batch, const LossSpec& loss) {
  batch.validate();
  const ForwardCache c = forward_cached(params, batch.features);
  LossEval e = evaluate_loss(params, c, batch, loss, /*want_grad=*/true);
  return {e.loss, backward(params, c, e.d_out)};
}

double loss_value(const ParamSet& params, const Batch& batch, const LossSpec& loss) {
  batch.validate();
  const ForwardCache c = forward_cached(params, batch.features);
  return evaluate_loss(params, c, batch, loss, /*want_grad=*/false).loss;
}

void sgd_step(ParamSet& params, const Gradients& grads, OptimState& state) {
  if (grads.layers.size() != params.layers.size() ||
      state.momentum_buffers.size() != params.layers.size()) {
    throw ShapeError("sgd_step: layer count mismatch");
  }
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    auto& p = params.layers[k];
    const auto& g = grads.layers[k];
    auto& buf = state.momentum_buffers[k];
    if (g.weight.rows() != p.weight.rows() || g.weight.cols() != p.weight.cols() ||
        buf.weight.rows() != p.weight.rows() || buf.weight.cols() != p.weight.cols()) {
      throw ShapeError("sgd_step: shape mismatch at layer " + std::to_string(k));
    }
    buf.weight = state.momentum * buf.weight + g.weight + state.weight_decay * p.weight;
    buf.bias = state.momentum * buf.bias + g.bias + state.weight_decay * p.bias;
    p.weight -= state.learning_rate * buf.weight;
    p.bias -= state.learning_rate * buf.bias;
  }
}

int argmax(const Eigen::Ref<const Vector>& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(m.rows());
  for (Eigen::Index r = 0; r < m.rows(); ++r) out[r] = argmax(m.row(r).transpose());
  return out;
}

}  // namespace propmix
