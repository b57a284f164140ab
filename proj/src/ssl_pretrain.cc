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

#include "propmix/ssl_pretrain.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "propmix/checkpoint.h"
#include "propmix/error.h"
#include "propmix/logging.h"
#include "propmix/rng.h"

namespace propmix {

void AugmentSpec::validate() const {
  if (!(jitter_sigma >= 0.0)) throw ConfigError("augmentation jitter sigma must be >= 0");
  if (!(mask_fraction >= 0.0 && mask_fraction < 1.0)) {
    throw ConfigError("mask fraction must lie in [0,1)");
  }
}

Vector augment(const Eigen::Ref<const Vector>& x, const AugmentSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  Vector out = x;
  if (spec.jitter_sigma > 0.0) {
    for (Eigen::Index k = 0; k < out.size(); ++k) out[k] += rng.normal(0.0, spec.jitter_sigma);
  }
  if (spec.mode == AugmentMode::kStrong && spec.mask_fraction > 0.0 && out.size() > 0) {
    const auto d = static_cast<std::size_t>(out.size());
    const auto run = static_cast<std::size_t>(std::lround(spec.mask_fraction * static_cast<double>(d)));
    const std::size_t start = rng.index(d);
    for (std::size_t k = 0; k < run; ++k) out[static_cast<Eigen::Index>((start + k) % d)] = 0.0;
  }
  return out;
}

Matrix augment_rows(const Matrix& x, const AugmentSpec& spec, std::uint64_t seed) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    out.row(r) = augment(x.row(r).transpose(), spec, derive_seed(seed, "row", r)).transpose();
  }
  return out;
}

void ContrastiveConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("contrastive temperature must be > 0");
  if (batch_size < 2) throw ConfigError("contrastive batch size must be >= 2");
  if (epochs < 0) throw ConfigError("contrastive epochs must be >= 0");
  if (embed_dim < 1) throw ConfigError("embedding dim must be >= 1");
  augment.validate();
}

void ScanConfig::validate() const {
  if (!(entropy_weight >= 0.0)) throw ConfigError("entropy weight must be >= 0");
  if (epochs < 0) throw ConfigError("SCAN epochs must be >= 0");
  if (neighbors < 1) throw ConfigError("neighbor count K must be >= 1");
  if (batch_size < 1) throw ConfigError("SCAN batch size must be >= 1");
  augment.validate();
}

void NeighborTable::validate() const {
  if (indices.size() != static_cast<std::size_t>(n) * k) {
    throw ContractViolation("neighbor table size does not match n * k");
  }
  for (int i = 0; i < n; ++i) {
    for (int j : row(i)) {
      if (j < 0 || j >= n || j == i) {
        throw ContractViolation("neighbor table row " + std::to_string(i) +
                                " has an invalid entry " + std::to_string(j));
      }
    }
  }
}

std::vector<std::pair<int, int>> NeighborTable::pairs() const {
  std::vector<std::pair<int, int>> p;
  p.reserve(indices.size());
  for (int i = 0; i < n; ++i) {
    for (int j : row(i)) p.emplace_back(i, j);
  }
  return p;
}

NeighborTable mine_knn(const Matrix& embeddings, int k) {
  const auto n = static_cast<int>(embeddings.rows());
  if (k < 1 || k >= n) {
    throw ConfigError("K must satisfy 1 <= K < N (K=" + std::to_string(k) +
                      ", N=" + std::to_string(n) + ")");
  }
  Matrix unit = embeddings;
  for (Eigen::Index r = 0; r < unit.rows(); ++r) {
    const double norm = unit.row(r).norm();
    if (norm > 0.0) unit.row(r) /= norm;
  }
  NeighborTable t{n, k, std::vector<int>(static_cast<std::size_t>(n) * k)};
  constexpr int kBlock = 256;
  std::vector<int> order(n);
  for (int start = 0; start < n; start += kBlock) {
    const int rows = std::min(kBlock, n - start);
    const Matrix sims = unit.middleRows(start, rows) * unit.transpose();
    for (int r = 0; r < rows; ++r) {
      const int i = start + r;
      std::iota(order.begin(), order.end(), 0);
      auto better = [&](int a, int b) {
        if (a == i || b == i) return b == i && a != i;
        if (sims(r, a) != sims(r, b)) return sims(r, a) > sims(r, b);
        return a < b;
      };
      std::partial_sort(order.begin(), order.begin() + k, order.end(), better);
      std::copy_n(order.begin(), k, t.indices.begin() + static_cast<std::size_t>(i) * k);
    }
  }
  return t;
}

double scan_loss(const Matrix& cluster_probs, const NeighborTable& neighbors,
                 double entropy_weight) {
  if (neighbors.n != cluster_probs.rows()) {
    throw ShapeError("neighbor table and probability matrix disagree on N");
  }
  const auto pairs = neighbors.pairs();
  return scan_loss(cluster_probs, std::span<const std::pair<int, int>>(pairs), entropy_weight);
}

namespace {

Matrix gather_rows(const Matrix& x, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(r) = x.row(idx[r]);
  return out;
}

std::vector<int> with_head(std::span<const int> hidden, int in, int out) {
  std::vector<int> dims{in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  return dims;
}

}  // namespace

PretrainResult pretrain(const Matrix& features, int num_clusters, std::span<const int> hidden,
                        Activation activation, const ContrastiveConfig& cc,
                        const ScanConfig& sc, std::uint64_t seed) {
  cc.validate();
  sc.validate();
  if (num_clusters < 2) throw ConfigError("need at least 2 clusters");
  if (hidden.empty()) throw ConfigError("pretraining needs at least one hidden layer");
  const auto n = static_cast<std::size_t>(features.rows());
  const int dim = static_cast<int>(features.cols());
  if (n < 2) throw ConfigError("pretraining needs at least 2 samples");

  PretrainResult result;
  const auto enc_dims = with_head(hidden, dim, cc.embed_dim);
  result.encoder = init_mlp(enc_dims, activation, Head::kEmbedder, derive_seed(seed, "encoder_init"));

  // Stage 1: contrastive.
  OptimState enc_opt = OptimState::for_params(result.encoder, cc.learning_rate, cc.momentum,
                                              cc.weight_decay);
  const std::size_t cbatch = std::min<std::size_t>(cc.batch_size, n);
  for (int epoch = 0; epoch < cc.epochs; ++epoch) {
    Rng rng(derive_seed(seed, "contrastive_epoch", epoch));
    const auto perm = rng.permutation(n);
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start + 2 <= n; start += cbatch) {
      const std::size_t len = std::min(cbatch, n - start);
      if (len < 2) break;
      const std::span<const std::size_t> idx(perm.data() + start, len);
      const Matrix x = gather_rows(features, idx);
      const std::uint64_t bseed = derive_seed(seed, "contrastive_views", epoch * n + start);
      Batch b;
      b.features.resize(static_cast<Eigen::Index>(2 * len), dim);
      b.features.topRows(len) = augment_rows(x, cc.augment, derive_seed(bseed, "view", 0));
      b.features.bottomRows(len) = augment_rows(x, cc.augment, derive_seed(bseed, "view", 1));
      const auto lg = grad(result.encoder, b, ContrastiveLoss{cc.temperature});
      sgd_step(result.encoder, lg.grad, enc_opt);
      total += lg.loss;
      ++batches;
    }
    result.contrastive_history.push_back(batches ? total / batches : 0.0);
  }

  // Stage 2: K-NN mining, then SCAN on trunk + fresh cluster head.
  const int k = std::min<int>(sc.neighbors, static_cast<int>(n) - 1);
  result.neighbors = mine_knn(forward(result.encoder, features), k);

  result.cluster_model.activation = activation;
  result.cluster_model.head = Head::kClassifier;
  result.cluster_model.layers.assign(result.encoder.layers.begin(),
                                     result.encoder.layers.end() - 1);
  const std::vector<int> head_dims{hidden.back(), num_clusters};
  ParamSet head = init_mlp(head_dims, activation, Head::kClassifier,
                           derive_seed(seed, "cluster_head_init"));
  result.cluster_model.layers.push_back(head.layers.front());

  OptimState scan_opt = OptimState::for_params(result.cluster_model, sc.learning_rate,
                                               sc.momentum, sc.weight_decay);
  const std::size_t sbatch = std::min<std::size_t>(sc.batch_size, n);
  for (int epoch = 0; epoch < sc.epochs; ++epoch) {
    Rng rng(derive_seed(seed, "scan_epoch", epoch));
    const auto perm = rng.permutation(n);
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < n; start += sbatch) {
      const std::size_t len = std::min(sbatch, n - start);
      std::vector<std::size_t> rows(perm.begin() + start, perm.begin() + start + len);
      for (std::size_t b = 0; b < len; ++b) {
        const auto nbrs = result.neighbors.row(static_cast<int>(perm[start + b]));
        rows.push_back(static_cast<std::size_t>(nbrs[rng.index(nbrs.size())]));
      }
      const std::uint64_t bseed = derive_seed(seed, "scan_views", epoch * n + start);
      Batch batch;
      batch.features = augment_rows(gather_rows(features, rows), sc.augment, bseed);
      ScanLoss loss{{}, sc.entropy_weight};
      for (std::size_t b = 0; b < len; ++b) {
        loss.pairs.emplace_back(static_cast<int>(b), static_cast<int>(len + b));
      }
      const auto lg = grad(result.cluster_model, batch, loss);
      sgd_step(result.cluster_model, lg.grad, scan_opt);
      total += lg.loss;
      ++batches;
    }
    result.scan_history.push_back(batches ? total / batches : 0.0);
  }
  // The encoder keeps the trunk that SCAN refined.
  for (std::size_t l = 0; l + 1 < result.encoder.layers.size(); ++l) {
    result.encoder.layers[l] = result.cluster_model.layers[l];
  }
  return result;
}

double knn_purity(const NeighborTable& neighbors, std::span<const int> labels) {
  if (labels.size() != static_cast<std::size_t>(neighbors.n)) {
    throw ShapeError("knn_purity: one label per sample required");
  }
  std::size_t agree = 0;
  for (int i = 0; i < neighbors.n; ++i) {
    for (int j : neighbors.row(i)) agree += labels[i] == labels[j];
  }
  return static_cast<double>(agree) / static_cast<double>(neighbors.indices.size());
}

std::vector<int> match_clusters(std::span<const int> clusters, std::span<const int> labels,
                                int num_classes) {
  if (clusters.size() != labels.size()) throw ShapeError("match_clusters: length mismatch");
  const int m = num_classes;
  // cost[cluster][class] = -count; Hungarian (Kuhn-Munkres with potentials).
  std::vector<std::vector<double>> cost(m + 1, std::vector<double>(m + 1, 0.0));
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    if (clusters[i] < 0 || clusters[i] >= m || labels[i] < 0 || labels[i] >= m) {
      throw ShapeError("match_clusters: id out of range");
    }
    cost[clusters[i] + 1][labels[i] + 1] -= 1.0;
  }
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(m + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int row = 1; row <= m; ++row) {
    p[0] = row;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0][j] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> mapping(m, 0);
  for (int j = 1; j <= m; ++j) mapping[p[j] - 1] = j - 1;
  return mapping;
}

nlohmann::json pretrain_to_json(const PretrainResult& r) {
  return {{"format", "propmix-pretrain"},
          {"version", 1},
          {"encoder", paramset_to_json(r.encoder)},
          {"cluster_model", paramset_to_json(r.cluster_model)},
          {"neighbors", {{"n", r.neighbors.n}, {"k", r.neighbors.k}, {"indices", r.neighbors.indices}}},
          {"contrastive_history", r.contrastive_history},
          {"scan_history", r.scan_history}};
}

PretrainResult pretrain_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "propmix-pretrain" || j.at("version").get<int>() != 1) {
      throw ParseError("not a version-1 propmix-pretrain checkpoint", 0);
    }
    PretrainResult r;
    r.encoder = paramset_from_json(j.at("encoder"));
    r.cluster_model = paramset_from_json(j.at("cluster_model"));
    const auto& nb = j.at("neighbors");
    r.neighbors.n = nb.at("n").get<int>();
    r.neighbors.k = nb.at("k").get<int>();
    r.neighbors.indices = nb.at("indices").get<std::vector<int>>();
    r.neighbors.validate();
    r.contrastive_history = j.value("contrastive_history", std::vector<double>{});
    r.scan_history = j.value("scan_history", std::vector<double>{});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed pretrain checkpoint: ") + e.what(), 0);
  }
}

}  // namespace propmix
