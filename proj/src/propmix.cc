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

#include "propmix/propmix.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "propmix/error.h"
#include "propmix/logging.h"
#include "propmix/losses.h"
#include "propmix/rng.h"

namespace propmix {

void MixConfig::validate() const {
  if (augment_count < 1) throw ConfigError("augment count M must be >= 1");
  if (!(sharpen_temperature > 0.0)) throw ConfigError("sharpening temperature T must be > 0");
  if (!(mixup_alpha > 0.0)) throw ConfigError("MixUp alpha must be > 0");
  if (!(reg_weight >= 0.0)) throw ConfigError("regularizer weight must be >= 0");
  if (warmup_epochs < 0) throw ConfigError("warm-up epochs must be >= 0");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  augment.validate();
}

double EpochStats::zeta() const {
  const std::size_t pool = n_clean + n_easy;
  return pool == 0 ? 0.0 : static_cast<double>(n_easy) / static_cast<double>(pool);
}

CoModels make_co_models(int input_dim, std::span<const int> hidden, int num_classes,
                        Activation activation, const std::optional<ParamSet>& init,
                        double learning_rate, double momentum, double weight_decay,
                        std::uint64_t seed) {
  std::vector<int> dims{input_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(num_classes);
  CoModels m;
  for (int k = 0; k < 2; ++k) {
    ParamSet p =
        init_mlp(dims, activation, Head::kClassifier, derive_seed(seed, "co_model_init", k));
    if (init) {
      // Copy the pretrained trunk; the classifier head stays freshly initialized.
      if (init->layers.size() != p.layers.size() || init->input_dim() != input_dim ||
          init->activation != activation) {
        throw ShapeError("pretrained encoder does not match the classifier architecture");
      }
      for (std::size_t l = 0; l + 1 < p.layers.size(); ++l) {
        if (init->layers[l].weight.rows() != p.layers[l].weight.rows()) {
          throw ShapeError("pretrained encoder does not match the classifier architecture");
        }
        p.layers[l] = init->layers[l];
      }
    }
    m.net(k).optim = OptimState::for_params(p, learning_rate, momentum, weight_decay);
    m.net(k).params = std::move(p);
  }
  return m;
}

void set_epoch(CoModels& models, int epoch) {
  models.a.optim.set_epoch(epoch);
  models.b.optim.set_epoch(epoch);
}

namespace {

Matrix gather_rows(const Matrix& x, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(r) = x.row(idx[r]);
  return out;
}

}  // namespace

Network train_ce_epoch(Network net, const Matrix& features, std::span<const int> labels,
                       int num_classes, int batch_size, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (labels.size() != n) throw ShapeError("train_ce_epoch: one label per row required");
  Rng rng(seed);
  const auto perm = rng.permutation(n);
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t len = std::min<std::size_t>(batch_size, n - start);
    const std::span<const std::size_t> idx(perm.data() + start, len);
    Batch b;
    b.features = gather_rows(features, idx);
    b.targets = Matrix::Zero(static_cast<Eigen::Index>(len), num_classes);
    for (std::size_t r = 0; r < len; ++r) b.targets(r, labels[idx[r]]) = 1.0;
    const auto lg = grad(net.params, b, CeLoss{0.0});
    sgd_step(net.params, lg.grad, net.optim);
  }
  return net;
}

CoModels warmup(CoModels models, const LabeledDataset& ds, int epochs, int batch_size,
                std::uint64_t seed, int first_epoch) {
  for (int e = 0; e < epochs; ++e) {
    set_epoch(models, first_epoch + e);
    for (int k = 0; k < 2; ++k) {
      models.net(k) = train_ce_epoch(std::move(models.net(k)), ds.features, ds.given_labels,
                                     ds.num_classes, batch_size,
                                     derive_seed(seed, k == 0 ? "warmup_a" : "warmup_b", e));
    }
  }
  return models;
}

Vector temp_sharpen(const Eigen::Ref<const Vector>& p, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("sharpening temperature must be > 0");
  // Work in log space so small T does not underflow every entry.
  Vector logs(p.size());
  for (Eigen::Index c = 0; c < p.size(); ++c) {
    logs[c] = p[c] > 0.0 ? std::log(p[c]) / temperature : -std::numeric_limits<double>::infinity();
  }
  const double m = logs.maxCoeff();
  Vector out = (logs.array() - m).exp().matrix();
  return out / out.sum();
}

Vector refine_clean_label(const Eigen::Ref<const Vector>& y, double w,
                          const Eigen::Ref<const Vector>& p_b, double temperature) {
  if (!(w >= 0.0 && w <= 1.0)) throw ConfigError("clean weight w must lie in [0,1]");
  if (y.size() != p_b.size()) throw ShapeError("refine_clean_label: size mismatch");
  const Vector mixed = w * y + (1.0 - w) * p_b;
  return temp_sharpen(mixed, temperature);
}

Vector avg_prediction(const CoModels& models, const Matrix& views) {
  if (views.rows() < 1) throw ShapeError("avg_prediction needs at least one view");
  const Matrix pa = softmax(forward(models.a.params, views));
  const Matrix pb = softmax(forward(models.b.params, views));
  return (pa.colwise().sum() + pb.colwise().sum()).transpose() /
         (2.0 * static_cast<double>(views.rows()));
}

MixedSet proportional_mixup(const Matrix& features, const Matrix& targets, double alpha,
                            std::uint64_t seed, std::optional<double> forced_lambda) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (n == 0) throw ShapeError("proportional_mixup: empty pool");
  if (targets.rows() != features.rows()) throw ShapeError("proportional_mixup: row mismatch");
  if (!(alpha > 0.0)) throw ConfigError("MixUp alpha must be > 0");
  Rng rng(seed);
  MixedSet out;
  out.partner = rng.permutation(n);
  out.lambda.resize(n);
  out.features.resize(features.rows(), features.cols());
  out.targets.resize(targets.rows(), targets.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const double lam = forced_lambda ? *forced_lambda : rng.beta(alpha, alpha);
    const double l = std::max(lam, 1.0 - lam);
    const std::size_t j = out.partner[i];
    out.lambda[i] = l;
    out.features.row(i) = l * features.row(i) + (1.0 - l) * features.row(j);
    out.targets.row(i) = l * targets.row(i) + (1.0 - l) * targets.row(j);
  }
  return out;
}

std::vector<double> per_sample_loss(const ParamSet& params, const LabeledDataset& ds) {
  const Matrix probs = softmax(forward(params, ds.features));
  std::vector<double> loss(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    loss[i] = -std::log(std::max(probs(i, ds.given_labels[i]), kLogClamp));
  }
  return loss;
}

Partition form_partition(const ParamSet& peer, const LabeledDataset& ds, const MixConfig& cfg,
                         const FilterConfig& fcfg) {
  const Matrix probs = softmax(forward(peer, ds.features));
  std::vector<double> loss(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    loss[i] = -std::log(std::max(probs(i, ds.given_labels[i]), kLogClamp));
  }
  const CleanNoisySplit cn = split_clean_noisy(loss, fcfg);
  Partition part;
  part.clean = cn.clean;
  if (cfg.filter_hard) {
    std::vector<double> conf(cn.noisy.size());
    for (std::size_t k = 0; k < cn.noisy.size(); ++k) conf[k] = probs.row(cn.noisy[k]).maxCoeff();
    EasyHardSplit eh = split_easy_hard(cn.noisy, conf, fcfg);
    part.easy = std::move(eh.easy);
    part.hard = std::move(eh.hard);
  } else {
    part.easy = cn.noisy;
  }
  return part;
}

namespace {

struct Pool {
  Matrix features;
  Matrix targets;
  std::vector<int> source;  // dataset index per row
};

Pool build_pool(const CoModels& frozen, const LabeledDataset& ds, const Partition& part,
                const MixConfig& cfg, const AugmentSpec& aug, std::uint64_t seed) {
  const int m = cfg.augment_count;
  const std::size_t sources = part.clean.size() + part.easy.size();
  Pool pool;
  pool.features.resize(static_cast<Eigen::Index>(sources * m), ds.dim());
  pool.targets.resize(static_cast<Eigen::Index>(sources * m), ds.num_classes);
  pool.source.resize(sources * m);
  if (sources == 0) return pool;

  auto sample_at = [&](std::size_t s) {
    return s < part.clean.size() ? part.clean[s].index : part.easy[s - part.clean.size()];
  };
  for (std::size_t s = 0; s < sources; ++s) {
    const int i = sample_at(s);
    for (int v = 0; v < m; ++v) {
      const std::size_t row = s * m + v;
      pool.features.row(row) =
          augment(ds.features.row(i).transpose(), aug,
                  derive_seed(seed, "view", static_cast<std::uint64_t>(i) * m + v))
              .transpose();
      pool.source[row] = i;
    }
  }
  // Mean softmax over the M views of each source and both networks.
  const Matrix pa = softmax(forward(frozen.a.params, pool.features));
  const Matrix pb = softmax(forward(frozen.b.params, pool.features));
  for (std::size_t s = 0; s < sources; ++s) {
    Vector avg = Vector::Zero(ds.num_classes);
    for (int v = 0; v < m; ++v) {
      avg += pa.row(s * m + v).transpose() + pb.row(s * m + v).transpose();
    }
    avg /= 2.0 * m;
    Vector target;
    if (s < part.clean.size()) {
      Vector y = Vector::Zero(ds.num_classes);
      y[ds.given_labels[part.clean[s].index]] = 1.0;
      target = refine_clean_label(y, part.clean[s].w, avg, cfg.sharpen_temperature);
    } else {
      target = temp_sharpen(avg, cfg.sharpen_temperature);
    }
    for (int v = 0; v < m; ++v) pool.targets.row(s * m + v) = target.transpose();
  }
  return pool;
}

}  // namespace

std::pair<CoModels, EpochStats> train_epoch(CoModels models, const LabeledDataset& ds,
                                            const MixConfig& cfg, const FilterConfig& fcfg,
                                            int epoch, std::uint64_t seed,
                                            ContributionLog* log) {
  cfg.validate();
  fcfg.validate();
  set_epoch(models, epoch);
  const CoModels frozen = models;
  const std::uint64_t epoch_seed = derive_seed(seed, "train_epoch", epoch);
  const std::array<Partition, 2> parts = {
      form_partition(frozen.b.params, ds, cfg, fcfg),
      form_partition(frozen.a.params, ds, cfg, fcfg)};
  const std::vector<int> preds = predict(frozen, ds.features);

  EpochStats stats;
  stats.epoch = epoch;
  double loss_sum = 0.0;
  int loss_batches = 0;
  for (int k = 0; k < 2; ++k) {
    const Partition& part = parts[k];
    const double rate = static_cast<double>(part.noisy_count()) / static_cast<double>(ds.size());
    const bool strong = rate > cfg.strong_aug_trigger;
    const AugmentSpec aug =
        cfg.augment.as_mode(strong ? AugmentMode::kStrong : AugmentMode::kStandard);
    const std::uint64_t net_seed = derive_seed(epoch_seed, "network", k);
    const Pool pool = build_pool(frozen, ds, part, cfg, aug, derive_seed(net_seed, "pool"));
    if (k == 0) {
      stats.strong_augmentation = strong;
      stats.pool_size = pool.source.size();
    }
    if (log) log->partitions[k] = part;
    if (pool.source.empty()) {
      log_warning("epoch " + std::to_string(epoch) + ": empty MixUp pool, network " +
                  std::to_string(k) + " not updated");
      continue;
    }
    const MixedSet mixed = proportional_mixup(pool.features, pool.targets, cfg.mixup_alpha,
                                              derive_seed(net_seed, "mixup"));
    Rng order_rng(derive_seed(net_seed, "batch_order"));
    const auto order = order_rng.permutation(pool.source.size());
    Network& net = models.net(k);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min<std::size_t>(cfg.batch_size, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, len);
      Batch b{gather_rows(mixed.features, idx), gather_rows(mixed.targets, idx)};
      const auto lg = grad(net.params, b, CeLoss{cfg.reg_weight});
      sgd_step(net.params, lg.grad, net.optim);
      loss_sum += lg.loss;
      ++loss_batches;
      if (log) {
        for (std::size_t r : idx) {
          log->contributors[k].push_back(pool.source[r]);
          log->contributors[k].push_back(pool.source[mixed.partner[r]]);
        }
      }
    }
  }

  const Partition& reported = parts[0];
  stats.n_clean = reported.clean.size();
  stats.n_easy = reported.easy.size();
  stats.n_hard = reported.hard.size();
  stats.filter = filter_metrics(reported, ds, preds);
  stats.est_noise_rate = stats.filter.est_noise_rate;
  stats.train_loss = loss_batches ? loss_sum / loss_batches : 0.0;
  return {std::move(models), stats};
}

std::vector<int> predict(const CoModels& models, const Matrix& features) {
  const Matrix p = softmax(forward(models.a.params, features)) +
                   softmax(forward(models.b.params, features));
  return argmax_rows(p);
}

double accuracy(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) throw ShapeError("accuracy: length mismatch");
  if (preds.empty()) throw ShapeError("accuracy of an empty set is undefined");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

double evaluate(const CoModels& models, const LabeledDataset& test) {
  if (test.size() == 0) throw ShapeError("cannot evaluate on an empty test set");
  return accuracy(predict(models, test.features), test.true_labels);
}

}  // namespace propmix
