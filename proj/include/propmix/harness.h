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

#ifndef PROPMIX_HARNESS_H_
#define PROPMIX_HARNESS_H_

// Experiment driver: JSON run configs, seeded end-to-end runs, threshold
// sweeps, ablations and metrics files.
//
// Metrics CSV columns, in order:
//   epoch,test_acc,est_noise_rate,zeta,n_clean,n_easy,n_hard,clean_precision,
//   clean_recall,hard_precision,hard_recall,relabel_acc,train_loss
// Undefined values are written as `NA`. Summary JSON keys:
//   config_hash,best_acc,last10_acc,epochs,seed,wall_clock_s

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "propmix/dataset.h"
#include "propmix/gmm_filter.h"
#include "propmix/propmix.h"
#include "propmix/ssl_pretrain.h"

namespace propmix {

enum class Mode { kPretrain, kTrain, kInject, kEval, kSweep, kAblation };
enum class Method { kPropMix, kCrossEntropy, kPretrainOnly };

std::string to_string(Mode m);
std::string to_string(Method m);
Mode mode_from_string(const std::string& s);
Method method_from_string(const std::string& s);

struct DataConfig {
  // Synthetic blobs, used unless train_path is set.
  int classes = 10;
  int train_per_class = 500;
  int test_per_class = 100;
  int dim = 32;
  double separation = 4.0;
  std::uint64_t seed = 1;
  std::string train_path;
  std::string test_path;
};

struct NoiseConfig {
  NoiseKind kind = NoiseKind::kSymmetric;
  double rate = 0.0;
  PairMap pairs;
  std::optional<std::uint64_t> seed;  // default: derived from the run seed
  std::string auxiliary_path;         // instance noise; trained on the fly if empty
};

struct ModelConfig {
  std::vector<int> hidden{128, 128};
  Activation activation = Activation::kRelu;
  double learning_rate = 0.02;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double lr_drop_factor = 0.1;
};

struct PretrainSection {
  bool enabled = true;
  ContrastiveConfig contrastive;
  ScanConfig scan;
  std::string checkpoint;  // load instead of training when set
};

struct SweepConfig {
  std::vector<double> clean_thresholds{0.5};
  std::vector<double> hard_thresholds{0.5};
};

struct AblationConfig {
  std::vector<std::string> variants{"full", "no-filter", "no-pretrain", "pretrain-only"};
  std::vector<double> noise_rates{0.2, 0.5, 0.8};
};

struct RunConfig {
  Mode mode = Mode::kTrain;
  Method method = Method::kPropMix;
  // Train on the hidden true labels (clean-label oracle).
  bool use_true_labels = false;
  DataConfig data;
  NoiseConfig noise;
  ModelConfig model;
  PretrainSection pretrain;
  MixConfig mix;
  FilterConfig filter;
  SweepConfig sweep;
  AblationConfig ablation;
  std::vector<std::uint64_t> seeds{0};
  std::string out_dir;
  std::string model_checkpoint;  // eval mode

  // Throws ConfigError before any compute.
  void validate() const;
};

RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& cfg);
RunConfig load_config(const std::filesystem::path& path);

// FNV-1a over the canonical JSON of every field except out_dir.
std::string config_hash(const RunConfig& cfg);

struct RunReport {
  std::string config_hash;
  std::uint64_t seed = 0;
  Method method = Method::kPropMix;
  std::vector<EpochStats> rows;
  bool has_filter_stats = true;
  double best_acc = 0.0;
  double last10_acc = 0.0;
  double final_acc = 0.0;
  double wall_clock_s = 0.0;
  std::vector<std::string> artifacts;
  std::optional<CoModels> models;

  // best = max test_acc, last10 = mean of the final 10 rows (or the final
  // row when fewer than 10).
  void finalize();
};

// Small classifier fit on the true labels, used as the instance-noise
// auxiliary when none is supplied.
ParamSet train_auxiliary(const LabeledDataset& ds, std::uint64_t seed);

struct PreparedData {
  LabeledDataset train;
  LabeledDataset test;
};

// Builds (or loads) train/test and applies the configured noise to train.
PreparedData prepare_data(const RunConfig& cfg, std::uint64_t seed);

// Memoizes pretraining by (features, pretrain config, seed) within a process.
class PretrainCache {
 public:
  const PretrainResult& get(const Matrix& features, int num_clusters, const RunConfig& cfg,
                            std::uint64_t seed);

 private:
  std::mutex mu_;
  std::map<std::string, std::unique_ptr<PretrainResult>> entries_;
};

struct RunOptions {
  PretrainCache* cache = nullptr;
  // Writes metrics/summary/checkpoint files under this directory when set.
  std::optional<std::filesystem::path> output_dir;
  // Called after every training epoch with the contribution log.
  std::function<void(const EpochStats&, const ContributionLog&)> on_epoch;
  bool keep_models = false;
};

// The pretrain seed for a run; shared by every variant of the same seed.
std::uint64_t pretrain_seed(std::uint64_t run_seed);

RunReport run_experiment(const RunConfig& cfg, std::uint64_t seed, const RunOptions& opts = {});

struct SweepRow {
  double clean_threshold;
  double hard_threshold;
  std::uint64_t seed;
  double best_acc;
  double last10_acc;
  double final_acc;
};
std::vector<SweepRow> sweep_thresholds(const RunConfig& base, const RunOptions& opts = {});
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

struct AblationRow {
  std::string variant;
  double noise_rate;
  std::uint64_t seed;
  double final_acc;
  double best_acc;
};
inline const std::vector<std::string>& ablation_variant_ids() {
  static const std::vector<std::string> ids{"full", "no-filter", "no-pretrain", "pretrain-only"};
  return ids;
}
// Throws ConfigError naming the valid ids for an unknown variant.
RunConfig apply_variant(RunConfig cfg, const std::string& variant);
std::vector<AblationRow> run_ablation(const RunConfig& base, const RunOptions& opts = {});
// Wide table: one row per variant, one column per noise rate (mean over seeds).
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);

// metrics.csv + summary.json in `dir`.
std::vector<std::filesystem::path> emit_metrics(const RunReport& report,
                                                const std::filesystem::path& dir);

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochStats& row, bool has_filter_stats);
nlohmann::json summary_json(const RunReport& report);

struct MetricsTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::optional<double>>> rows;
};
MetricsTable read_metrics_csv(const std::filesystem::path& path);

// CoModels checkpoint: {"format": "propmix-comodels", "version": 1, "a": ..., "b": ...}.
void save_co_models(const std::filesystem::path& path, const CoModels& models);
CoModels load_co_models(const std::filesystem::path& path);

}  // namespace propmix

#endif  // PROPMIX_HARNESS_H_
