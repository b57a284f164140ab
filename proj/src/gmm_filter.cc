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

#include "propmix/gmm_filter.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "propmix/error.h"
#include "propmix/logging.h"

namespace propmix {

void FilterConfig::validate() const {
  if (!(clean_threshold > 0.0 && clean_threshold < 1.0)) {
    throw ConfigError("clean threshold tau must lie in (0,1)");
  }
  if (!(hard_threshold > 0.0 && hard_threshold < 1.0)) {
    throw ConfigError("hard threshold tau' must lie in (0,1)");
  }
  if (!(em_tolerance > 0.0)) throw ConfigError("EM tolerance must be > 0");
  if (em_max_iterations < 1) throw ConfigError("EM needs at least one iteration");
}

void Partition::validate(std::size_t n) const {
  std::vector<char> seen(n, 0);
  auto mark = [&](int i) {
    if (i < 0 || static_cast<std::size_t>(i) >= n || seen[i]) {
      throw ContractViolation("partition index " + std::to_string(i) +
                              " out of range or repeated");
    }
    seen[i] = 1;
  };
  for (const auto& c : clean) {
    mark(c.index);
    if (!(c.w >= 0.0 && c.w <= 1.0)) throw ContractViolation("clean weight outside [0,1]");
  }
  for (int i : easy) mark(i);
  for (int i : hard) mark(i);
  if (clean.size() + easy.size() + hard.size() != n) {
    throw ContractViolation("partition does not cover every sample");
  }
}

std::vector<double> normalize01(std::span<const double> values) {
  if (values.empty()) throw InsufficientDataError("normalize01 needs at least one value");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double min = *lo;
  const double range = *hi - *lo;
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = range > 0.0 ? (values[i] - min) / range : 0.5;
  }
  return out;
}

namespace {

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double log_component(const Gmm1D& g, int k, double v) {
  const double var = g.variances[k];
  const double d = v - g.means[k];
  return std::log(std::max(g.weights[k], 1e-300)) - 0.5 * std::log(2.0 * std::numbers::pi * var) -
         d * d / (2.0 * var);
}

double log_sum_exp2(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Mean log-likelihood; fills responsibilities of component 0.
double e_step(const Gmm1D& g, std::span<const double> x, std::vector<double>& resp0) {
  double ll = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a0 = log_component(g, 0, x[i]);
    const double a1 = log_component(g, 1, x[i]);
    const double total = log_sum_exp2(a0, a1);
    resp0[i] = std::exp(a0 - total);
    ll += total;
  }
  return ll / static_cast<double>(x.size());
}

void m_step(Gmm1D& g, std::span<const double> x, const std::vector<double>& resp0) {
  const double n = static_cast<double>(x.size());
  for (int k = 0; k < 2; ++k) {
    double nk = 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double r = k == 0 ? resp0[i] : 1.0 - resp0[i];
      nk += r;
      sum += r * x[i];
    }
    if (nk <= 1e-12) {
      // Empty component: keep its mean, shrink it to the floor.
      g.weights[k] = 0.0;
      g.variances[k] = kVarianceFloor;
      continue;
    }
    const double mean = sum / nk;
    double sq = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double r = k == 0 ? resp0[i] : 1.0 - resp0[i];
      sq += r * (x[i] - mean) * (x[i] - mean);
    }
    g.means[k] = mean;
    g.variances[k] = std::max(sq / nk, kVarianceFloor);
    g.weights[k] = nk / n;
  }
}

}  // namespace

Gmm1D fit_gmm1d(std::span<const double> values, const FilterConfig& cfg) {
  if (values.size() < 4) {
    throw InsufficientDataError("GMM fit needs at least 4 values, got " +
                                std::to_string(values.size()));
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());

  Gmm1D g;
  g.means = {quantile(sorted, 0.1), quantile(sorted, 0.9)};
  g.weights = {0.5, 0.5};
  double pooled = 0.0;
  for (double v : values) {
    const double d0 = std::abs(v - g.means[0]);
    const double d1 = std::abs(v - g.means[1]);
    const double m = d0 <= d1 ? g.means[0] : g.means[1];
    pooled += (v - m) * (v - m);
  }
  pooled = std::max(pooled / static_cast<double>(values.size()), kVarianceFloor);
  g.variances = {pooled, pooled};

  std::vector<double> resp0(values.size());
  double ll = e_step(g, values, resp0);
  g.log_likelihood_trace.push_back(ll);
  for (int it = 0; it < cfg.em_max_iterations; ++it) {
    m_step(g, values, resp0);
    const double next = e_step(g, values, resp0);
    g.log_likelihood_trace.push_back(next);
    ++g.iterations;
    const bool done = std::abs(next - ll) < cfg.em_tolerance;
    ll = next;
    if (done) {
      g.converged = true;
      break;
    }
  }
  if (g.means[1] < g.means[0]) {
    std::swap(g.means[0], g.means[1]);
    std::swap(g.variances[0], g.variances[1]);
    std::swap(g.weights[0], g.weights[1]);
  }
  return g;
}

double posterior_low(const Gmm1D& g, double v) {
  const double a0 = log_component(g, 0, v);
  const double a1 = log_component(g, 1, v);
  return 1.0 / (1.0 + std::exp(a1 - a0));
}

double posterior_high(const Gmm1D& g, double v) {
  const double a0 = log_component(g, 0, v);
  const double a1 = log_component(g, 1, v);
  return 1.0 / (1.0 + std::exp(a0 - a1));
}

CleanNoisySplit split_clean_noisy(std::span<const double> losses, const FilterConfig& cfg) {
  cfg.validate();
  const std::vector<double> norm = normalize01(losses);
  CleanNoisySplit s;
  s.gmm = fit_gmm1d(norm, cfg);
  s.w.resize(norm.size());
  for (std::size_t i = 0; i < norm.size(); ++i) {
    s.w[i] = posterior_low(s.gmm, norm[i]);
    if (s.w[i] >= cfg.clean_threshold) {
      s.clean.push_back({static_cast<int>(i), s.w[i]});
    } else {
      s.noisy.push_back(static_cast<int>(i));
    }
  }
  return s;
}

EasyHardSplit split_easy_hard(std::span<const int> noisy, std::span<const double> confidences,
                              const FilterConfig& cfg) {
  cfg.validate();
  if (noisy.size() != confidences.size()) {
    throw ShapeError("split_easy_hard: indices and confidences differ in length");
  }
  EasyHardSplit s;
  if (noisy.size() < 4) {
    log_warning("noisy set has " + std::to_string(noisy.size()) +
                " samples (< 4); hard-sample filter disabled, all treated as easy");
    s.easy.assign(noisy.begin(), noisy.end());
    return s;
  }
  s.gmm = fit_gmm1d(confidences, cfg);
  for (std::size_t k = 0; k < noisy.size(); ++k) {
    if (posterior_low(*s.gmm, confidences[k]) >= cfg.hard_threshold) {
      s.hard.push_back(noisy[k]);
    } else {
      s.easy.push_back(noisy[k]);
    }
  }
  return s;
}

namespace {
std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

FilterDiagnostics filter_metrics(const Partition& part, const LabeledDataset& ds,
                                 std::span<const int> preds) {
  const std::size_t n = ds.size();
  if (preds.size() != n) throw ShapeError("filter_metrics: one prediction per sample required");
  part.validate(n);
  auto is_clean = [&](int i) { return ds.given_labels[i] == ds.true_labels[i]; };
  auto is_hard = [&](int i) { return !is_clean(i) && preds[i] != ds.true_labels[i]; };

  std::size_t truly_clean = 0;
  std::size_t truly_hard = 0;
  for (std::size_t i = 0; i < n; ++i) {
    truly_clean += is_clean(static_cast<int>(i));
    truly_hard += is_hard(static_cast<int>(i));
  }
  std::size_t clean_hits = 0;
  for (const auto& c : part.clean) clean_hits += is_clean(c.index);
  std::size_t hard_hits = 0;
  std::size_t hard_correct = 0;
  for (int i : part.hard) {
    hard_hits += is_hard(i);
    hard_correct += preds[i] == ds.true_labels[i];
  }
  std::size_t easy_correct = 0;
  for (int i : part.easy) easy_correct += preds[i] == ds.true_labels[i];

  FilterDiagnostics d;
  d.clean_precision = ratio(clean_hits, part.clean.size());
  d.clean_recall = ratio(clean_hits, truly_clean);
  d.hard_precision = ratio(hard_hits, part.hard.size());
  d.hard_recall = ratio(hard_hits, truly_hard);
  d.relabel_acc = ratio(easy_correct, part.easy.size());
  d.noisy_relabel_acc = ratio(easy_correct + hard_correct, part.noisy_count());
  d.est_noise_rate = static_cast<double>(part.noisy_count()) / static_cast<double>(n);
  return d;
}

void write_partition_csv(const std::filesystem::path& path, const Partition& part) {
  struct Row {
    int index;
    const char* set;
    std::optional<double> w;
  };
  std::vector<Row> rows;
  for (const auto& c : part.clean) rows.push_back({c.index, "clean", c.w});
  for (int i : part.easy) rows.push_back({i, "easy", std::nullopt});
  for (int i : part.hard) rows.push_back({i, "hard", std::nullopt});
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.index < b.index; });
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "index,set,w\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.index << ',' << r.set << ',';
    if (r.w) out << *r.w;
    out << '\n';
  }
}

}  // namespace propmix
