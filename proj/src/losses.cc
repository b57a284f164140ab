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

#include "propmix/losses.h"

#include <cmath>
#include <limits>
#include <string>

#include "propmix/error.h"

namespace propmix {

namespace {

Vector column_mean(const Matrix& m) {
  return m.colwise().sum().transpose() / static_cast<double>(m.rows());
}

}  // namespace

double regularized_loss(const Matrix& probs, const Matrix& targets, double reg_weight) {
  const double ce = cross_entropy(probs, targets);
  if (reg_weight == 0.0 || probs.rows() == 0) return ce;
  const Vector mean = column_mean(probs);
  const double prior = 1.0 / static_cast<double>(probs.cols());
  double kl = 0.0;
  for (Eigen::Index c = 0; c < mean.size(); ++c) {
    kl += prior * std::log(prior / std::max(mean[c], kLogClamp));
  }
  return ce + reg_weight * kl;
}

Matrix regularized_loss_grad_logits(const Matrix& probs, const Matrix& targets,
                                    double reg_weight) {
  const double b = static_cast<double>(probs.rows());
  const Vector target_mass = targets.rowwise().sum();
  Matrix d = (target_mass.asDiagonal() * probs - targets) / b;
  if (reg_weight != 0.0) {
    const Vector mean = column_mean(probs);
    const double prior = 1.0 / static_cast<double>(probs.cols());
    Eigen::RowVectorXd g_row(probs.cols());
    for (Eigen::Index c = 0; c < mean.size(); ++c) {
      g_row[c] = mean[c] > kLogClamp ? -prior / (b * mean[c]) : 0.0;
    }
    Matrix g = g_row.replicate(probs.rows(), 1);
    d += reg_weight * softmax_backward(probs, g);
  }
  return d;
}

namespace {

void check_contrastive_input(const Matrix& z, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("contrastive temperature must be > 0");
  if (z.rows() < 4 || z.rows() % 2 != 0) {
    throw ShapeError("contrastive loss needs an even number (>= 4) of embeddings, got " +
                     std::to_string(z.rows()));
  }
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    if (std::abs(z.row(r).norm() - 1.0) > 1e-6) {
      throw ContractViolation("embedding row " + std::to_string(r) + " is not unit norm");
    }
  }
}

// Row-softmax of similarity logits with the diagonal excluded. Returns the
// per-row log normalizer.
Vector masked_log_normalizer(const Matrix& s, Matrix* weights) {
  const Eigen::Index n = s.rows();
  Vector lse(n);
  if (weights) weights->setZero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < n; ++k) {
      if (k != i) m = std::max(m, s(i, k));
    }
    double sum = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (k != i) sum += std::exp(s(i, k) - m);
    }
    lse[i] = m + std::log(sum);
    if (weights) {
      for (Eigen::Index k = 0; k < n; ++k) {
        if (k != i) (*weights)(i, k) = std::exp(s(i, k) - lse[i]);
      }
    }
  }
  return lse;
}

}  // namespace

double contrastive_loss(const Matrix& embeddings, double temperature) {
  check_contrastive_input(embeddings, temperature);
  const Eigen::Index n = embeddings.rows();
  const Eigen::Index half = n / 2;
  const Matrix s = embeddings * embeddings.transpose() / temperature;
  const Vector lse = masked_log_normalizer(s, nullptr);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) total += lse[i] - s(i, (i + half) % n);
  return total / static_cast<double>(n);
}

double contrastive_loss_grad(const Matrix& embeddings, double temperature,
                             Matrix* d_embeddings) {
  check_contrastive_input(embeddings, temperature);
  const Eigen::Index n = embeddings.rows();
  const Eigen::Index half = n / 2;
  const Matrix s = embeddings * embeddings.transpose() / temperature;
  Matrix w;
  const Vector lse = masked_log_normalizer(s, &w);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    total += lse[i] - s(i, (i + half) % n);
    w(i, (i + half) % n) -= 1.0;
  }
  // w now holds n * dL/dS; S = Z Z^T / tau.
  const Matrix sym = (w + w.transpose()) / (static_cast<double>(n) * temperature);
  *d_embeddings = sym * embeddings;
  return total / static_cast<double>(n);
}

double scan_loss(const Matrix& probs, std::span<const std::pair<int, int>> pairs,
                 double entropy_weight) {
  return scan_loss_grad(probs, pairs, entropy_weight, nullptr);
}

double scan_loss_grad(const Matrix& probs, std::span<const std::pair<int, int>> pairs,
                      double entropy_weight, Matrix* d_probs) {
  if (entropy_weight < 0.0) throw ConfigError("entropy weight must be >= 0");
  const Eigen::Index n = probs.rows();
  if (n == 0) throw ShapeError("scan_loss: empty probability matrix");
  if (d_probs) d_probs->setZero(n, probs.cols());
  const std::vector<int> top = argmax_rows(probs);

  double consistency = 0.0;
  const double num_pairs = static_cast<double>(pairs.size());
  for (const auto& [i, j] : pairs) {
    if (i < 0 || j < 0 || i >= n || j >= n) throw ShapeError("scan_loss: pair index out of range");
    if (top[i] != top[j]) continue;
    const double dot = probs.row(i).dot(probs.row(j));
    consistency -= std::log(std::max(dot, kLogClamp)) / num_pairs;
    if (d_probs && dot > kLogClamp) {
      d_probs->row(i) -= probs.row(j) / (num_pairs * dot);
      d_probs->row(j) -= probs.row(i) / (num_pairs * dot);
    }
  }

  const Vector mean = column_mean(probs);
  double neg_entropy = 0.0;
  Eigen::RowVectorXd d_mean(probs.cols());
  for (Eigen::Index c = 0; c < mean.size(); ++c) {
    const double clamped = std::max(mean[c], kLogClamp);
    neg_entropy += mean[c] * std::log(clamped);
    d_mean[c] = mean[c] > kLogClamp ? std::log(mean[c]) + 1.0 : std::log(kLogClamp);
  }
  if (d_probs && entropy_weight != 0.0) {
    d_probs->rowwise() += entropy_weight * d_mean / static_cast<double>(n);
  }
  return consistency + entropy_weight * neg_entropy;
}

Matrix softmax_backward(const Matrix& probs, const Matrix& d_probs) {
  const Vector inner = (probs.array() * d_probs.array()).rowwise().sum();
  return (probs.array() * (d_probs.colwise() - inner).array()).matrix();
}

}  // namespace propmix
