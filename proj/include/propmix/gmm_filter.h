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

#ifndef PROPMIX_GMM_FILTER_H_
#define PROPMIX_GMM_FILTER_H_

// Two-stage sample triage. A 1-D two-component GMM on normalized per-sample
// losses separates clean from noisy samples; a second GMM on the top-class
// confidence of the noisy samples separates easy (kept, relabeled) from hard
// (dropped for the epoch).

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "propmix/dataset.h"

namespace propmix {

inline constexpr double kVarianceFloor = 1e-6;

// Components are sorted by mean, so index 0 is the low-mean component.
struct Gmm1D {
  std::array<double, 2> means{};
  std::array<double, 2> variances{};
  std::array<double, 2> weights{};
  int iterations = 0;
  bool converged = false;
  // Mean per-sample log-likelihood after every EM iteration.
  std::vector<double> log_likelihood_trace;
};

struct FilterConfig {
  double clean_threshold = 0.5;  // tau
  double hard_threshold = 0.5;   // tau'
  double em_tolerance = 1e-6;
  int em_max_iterations = 100;

  void validate() const;
};

struct CleanEntry {
  int index;
  double w;
};

struct Partition {
  std::vector<CleanEntry> clean;
  std::vector<int> easy;
  std::vector<int> hard;

  std::size_t noisy_count() const { return easy.size() + hard.size(); }
  // Throws ContractViolation unless clean, easy and hard tile [0, n).
  void validate(std::size_t n) const;
};

std::vector<double> normalize01(std::span<const double> values);

// EM from means at the 10th/90th percentiles, equal weights and the pooled
// within-group variance. Stops when the mean log-likelihood moves by less
// than cfg.em_tolerance or after cfg.em_max_iterations. Throws
// InsufficientDataError for fewer than 4 values.
Gmm1D fit_gmm1d(std::span<const double> values, const FilterConfig& cfg);

double posterior_low(const Gmm1D& g, double v);
double posterior_high(const Gmm1D& g, double v);

struct CleanNoisySplit {
  std::vector<double> w;  // p(clean | loss) for every sample
  std::vector<CleanEntry> clean;
  std::vector<int> noisy;
  Gmm1D gmm;
};

// i is clean iff posterior_low >= cfg.clean_threshold on min-max normalized losses.
CleanNoisySplit split_clean_noisy(std::span<const double> losses, const FilterConfig& cfg);

struct EasyHardSplit {
  std::vector<int> easy;
  std::vector<int> hard;
  std::optional<Gmm1D> gmm;  // empty when the filter was disabled
};

// `confidences[k]` is the max-class probability of sample `noisy[k]`. Fewer
// than 4 noisy samples disables the filter: all are easy.
EasyHardSplit split_easy_hard(std::span<const int> noisy, std::span<const double> confidences,
                              const FilterConfig& cfg);

// Precision/recall style diagnostics. Empty denominators give nullopt.
struct FilterDiagnostics {
  std::optional<double> clean_precision;
  std::optional<double> clean_recall;
  std::optional<double> hard_precision;
  std::optional<double> hard_recall;
  std::optional<double> relabel_acc;        // over the easy set
  std::optional<double> noisy_relabel_acc;  // over easy + hard (no filtering)
  double est_noise_rate = 0.0;              // |U| / |D|
};

// Ground-truth hard samples are those with given != true and pred != true.
FilterDiagnostics filter_metrics(const Partition& part, const LabeledDataset& ds,
                                 std::span<const int> preds);

// Debug dump: `index,set,w` with set in {clean, easy, hard}; w is empty for
// noisy samples.
void write_partition_csv(const std::filesystem::path& path, const Partition& part);

}  // namespace propmix

#endif  // PROPMIX_GMM_FILTER_H_
