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

#include "propmix/dataset.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "propmix/checkpoint.h"
#include "propmix/error.h"
#include "propmix/rng.h"

namespace propmix {

std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::kSymmetric:
      return "sym";
    case NoiseKind::kAsymmetric:
      return "asym";
    case NoiseKind::kInstance:
      return "instance";
  }
  return "?";
}

NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "sym" || s == "symmetric") return NoiseKind::kSymmetric;
  if (s == "asym" || s == "asymmetric") return NoiseKind::kAsymmetric;
  if (s == "instance") return NoiseKind::kInstance;
  throw ConfigError("unknown noise kind '" + s + "' (expected sym|asym|instance)");
}

PairMap parse_pair_map(const std::string& text) {
  PairMap pairs;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("pair '" + item + "' is not src:dst");
    try {
      pairs.emplace_back(std::stoi(item.substr(0, colon)), std::stoi(item.substr(colon + 1)));
    } catch (const std::exception&) {
      throw ConfigError("pair '" + item + "' is not src:dst");
    }
  }
  return pairs;
}

namespace {

void check_rate(double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw ConfigError("noise rate must be in [0,1], got " + std::to_string(rate));
  }
}

void check_pairs(const PairMap& pairs, int num_classes) {
  std::set<int> sources;
  for (const auto& [src, dst] : pairs) {
    if (src < 0 || src >= num_classes || dst < 0 || dst >= num_classes) {
      throw ConfigError("pair " + std::to_string(src) + ":" + std::to_string(dst) +
                        " references a class outside [0," + std::to_string(num_classes) + ")");
    }
    if (!sources.insert(src).second) {
      throw ConfigError("class " + std::to_string(src) + " is mapped more than once");
    }
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void NoiseSpec::validate(int num_classes) const {
  check_rate(rate);
  if (kind == NoiseKind::kAsymmetric) {
    if (pairs.empty()) throw ConfigError("asymmetric noise requires a pair map");
    check_pairs(pairs, num_classes);
  }
  if (kind == NoiseKind::kInstance && !auxiliary) {
    throw ConfigError("instance noise requires an auxiliary classifier");
  }
}

nlohmann::json NoiseSpec::to_json() const {
  nlohmann::json j{{"kind", to_string(kind)}, {"rate", rate}, {"seed", seed}};
  if (!pairs.empty()) {
    nlohmann::json p = nlohmann::json::array();
    for (const auto& [s, d] : pairs) p.push_back({s, d});
    j["pairs"] = p;
  }
  if (auxiliary) j["auxiliary_params"] = auxiliary->parameter_count();
  return j;
}

void LabeledDataset::validate() const {
  const std::size_t n = true_labels.size();
  if (n == 0) throw ConfigError("dataset has no samples");
  if (num_classes < 2) throw ConfigError("dataset needs at least 2 classes");
  if (given_labels.size() != n || static_cast<std::size_t>(features.rows()) != n) {
    throw ConfigError("dataset columns disagree in length");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (true_labels[i] < 0 || true_labels[i] >= num_classes || given_labels[i] < 0 ||
        given_labels[i] >= num_classes) {
      throw ConfigError("label out of range at sample " + std::to_string(i));
    }
  }
}

double LabeledDataset::noise_fraction() const {
  if (size() == 0) return 0.0;
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < size(); ++i) flipped += given_labels[i] != true_labels[i];
  return static_cast<double>(flipped) / static_cast<double>(size());
}

Matrix LabeledDataset::one_hot_given() const {
  Matrix y = Matrix::Zero(static_cast<Eigen::Index>(size()), num_classes);
  for (std::size_t i = 0; i < size(); ++i) y(i, given_labels[i]) = 1.0;
  return y;
}

bool operator==(const LabeledDataset& a, const LabeledDataset& b) {
  return a.num_classes == b.num_classes && a.true_labels == b.true_labels &&
         a.given_labels == b.given_labels && a.features.rows() == b.features.rows() &&
         a.features.cols() == b.features.cols() && a.features == b.features;
}

LabeledDataset make_synthetic(int classes, int per_class, int dim, double separation,
                              std::uint64_t seed, std::uint64_t sample_stream) {
  if (classes < 2) throw ConfigError("classes must be >= 2");
  if (per_class < 1) throw ConfigError("per_class must be >= 1");
  if (dim < 2) throw ConfigError("dim must be >= 2");
  if (!(separation > 0.0)) throw ConfigError("separation must be > 0");
  if (dim < classes) {
    throw ConfigError("cannot place " + std::to_string(classes) +
                      " equidistant class means in " + std::to_string(dim) +
                      " dimensions (need dim >= classes)");
  }
  Rng mean_rng(derive_seed(seed, "synthetic_means"));
  Eigen::MatrixXd gaussian(dim, dim);
  for (Eigen::Index i = 0; i < gaussian.size(); ++i) gaussian.data()[i] = mean_rng.normal();
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(gaussian).householderQ();
  const double radius = separation / std::sqrt(2.0);

  LabeledDataset ds;
  ds.num_classes = classes;
  ds.name = "blobs";
  const Eigen::Index n = static_cast<Eigen::Index>(classes) * per_class;
  ds.features.resize(n, dim);
  ds.true_labels.resize(n);
  Rng sample_rng(derive_seed(seed, "synthetic_samples", sample_stream));
  Eigen::Index row = 0;
  for (int c = 0; c < classes; ++c) {
    const Vector mean = radius * q.col(c);
    for (int i = 0; i < per_class; ++i, ++row) {
      for (int k = 0; k < dim; ++k) ds.features(row, k) = mean[k] + sample_rng.normal();
      ds.true_labels[row] = c;
    }
  }
  ds.given_labels = ds.true_labels;
  return ds;
}

void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds) {
  ds.validate();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (int k = 0; k < ds.dim(); ++k) out << 'f' << k << ',';
  out << "true_label,given_label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (int k = 0; k < ds.dim(); ++k) out << format_double(ds.features(i, k)) << ',';
    out << ds.true_labels[i] << ',' << ds.given_labels[i] << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
  nlohmann::json side{{"name", ds.name},
                      {"N", ds.size()},
                      {"d", ds.dim()},
                      {"classes", ds.num_classes},
                      {"noise_spec", ds.noise_spec}};
  write_json_file(path.string() + ".json", side);
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.empty()) throw ParseError("no samples", 0);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 4 || header[header.size() - 2] != "true_label" ||
      header.back() != "given_label") {
    throw ParseError("header must be f0,...,f{d-1},true_label,given_label", 1);
  }
  const std::size_t dim = header.size() - 2;
  for (std::size_t k = 0; k < dim; ++k) {
    if (header[k] != "f" + std::to_string(k)) {
      throw ParseError("unexpected header column '" + header[k] + "'", 1);
    }
  }

  LabeledDataset ds;
  int declared_classes = 0;
  const std::filesystem::path sidecar = path.string() + ".json";
  if (std::filesystem::exists(sidecar)) {
    const auto side = read_json_file(sidecar);
    declared_classes = side.value("classes", 0);
    ds.name = side.value("name", std::string{});
    if (side.contains("noise_spec")) ds.noise_spec = side["noise_spec"];
  }

  std::vector<double> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (std::size_t k = 0; k < dim + 2; ++k) {
      const char* stop = std::find(p, end, ',');
      if ((k + 1 < dim + 2) == (stop == end)) {
        throw ParseError("expected " + std::to_string(dim + 2) + " columns", line_no);
      }
      if (k < dim) {
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(p, stop, v);
        if (ec != std::errc() || ptr != stop) {
          throw ParseError("bad feature value '" + std::string(p, stop) + "'", line_no);
        }
        values.push_back(v);
      } else {
        int label = 0;
        auto [ptr, ec] = std::from_chars(p, stop, label);
        if (ec != std::errc() || ptr != stop || label < 0) {
          throw ParseError("bad label '" + std::string(p, stop) + "'", line_no);
        }
        if (declared_classes > 0 && label >= declared_classes) {
          throw ParseError("label " + std::to_string(label) + " out of range [0," +
                               std::to_string(declared_classes) + ")",
                           line_no);
        }
        (k == dim ? ds.true_labels : ds.given_labels).push_back(label);
      }
      p = stop == end ? end : stop + 1;
    }
  }
  if (ds.true_labels.empty()) throw ParseError("no samples", 0);
  const std::size_t n = ds.true_labels.size();
  ds.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  std::copy(values.begin(), values.end(), ds.features.data());
  if (declared_classes > 0) {
    ds.num_classes = declared_classes;
  } else {
    const int max_true = *std::max_element(ds.true_labels.begin(), ds.true_labels.end());
    const int max_given = *std::max_element(ds.given_labels.begin(), ds.given_labels.end());
    ds.num_classes = std::max({2, max_true + 1, max_given + 1});
  }
  ds.validate();
  return ds;
}

LabeledDataset inject_symmetric(const LabeledDataset& ds, double rate, std::uint64_t seed) {
  check_rate(rate);
  ds.validate();
  LabeledDataset out = ds;
  const std::uint64_t key = derive_seed(seed, "inject_symmetric");
  const int wrong = ds.num_classes - 1;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (counter_uniform(key, 2 * i) >= rate) continue;
    int pick = std::min(wrong - 1, static_cast<int>(counter_uniform(key, 2 * i + 1) * wrong));
    if (pick >= ds.true_labels[i]) ++pick;
    out.given_labels[i] = pick;
  }
  out.noise_spec = NoiseSpec{NoiseKind::kSymmetric, rate, {}, std::nullopt, seed}.to_json();
  return out;
}

LabeledDataset inject_asymmetric(const LabeledDataset& ds, const PairMap& pairs, double rate,
                                 std::uint64_t seed) {
  check_rate(rate);
  ds.validate();
  check_pairs(pairs, ds.num_classes);
  std::vector<int> target(ds.num_classes, -1);
  for (const auto& [src, dst] : pairs) target[src] = dst;
  LabeledDataset out = ds;
  const std::uint64_t key = derive_seed(seed, "inject_asymmetric");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int dst = target[ds.true_labels[i]];
    if (dst < 0) continue;
    if (counter_uniform(key, i) < rate) out.given_labels[i] = dst;
  }
  out.noise_spec = NoiseSpec{NoiseKind::kAsymmetric, rate, pairs, std::nullopt, seed}.to_json();
  return out;
}

LabeledDataset inject_instance(const LabeledDataset& ds, const ParamSet& auxiliary,
                               double rate, std::uint64_t seed) {
  check_rate(rate);
  ds.validate();
  if (auxiliary.output_dim() != ds.num_classes || auxiliary.head != Head::kClassifier) {
    throw ConfigError("auxiliary must be a classifier over the dataset's " +
                      std::to_string(ds.num_classes) + " classes");
  }
  const Matrix probs = softmax(forward(auxiliary, ds.features));
  const std::size_t n = ds.size();
  std::vector<int> wrong_class(n);
  std::vector<double> confidence(n);
  for (std::size_t i = 0; i < n; ++i) {
    int best = -1;
    for (int c = 0; c < ds.num_classes; ++c) {
      if (c == ds.true_labels[i]) continue;
      if (best < 0 || probs(i, c) > probs(i, best)) best = c;
    }
    wrong_class[i] = best;
    confidence[i] = probs(i, best);
  }
  const std::uint64_t key = derive_seed(seed, "inject_instance");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (confidence[a] != confidence[b]) return confidence[a] > confidence[b];
    const double ha = counter_uniform(key, a);
    const double hb = counter_uniform(key, b);
    return ha != hb ? ha < hb : a < b;
  });
  // Guard against 0.3 * N landing a hair above an integer.
  const auto count = static_cast<std::size_t>(
      std::ceil(rate * static_cast<double>(n) - 1e-9 * static_cast<double>(n)));
  LabeledDataset out = ds;
  for (std::size_t r = 0; r < std::min(count, n); ++r) {
    out.given_labels[order[r]] = wrong_class[order[r]];
  }
  NoiseSpec spec{NoiseKind::kInstance, rate, {}, auxiliary, seed};
  out.noise_spec = spec.to_json();
  return out;
}

LabeledDataset inject_noise(const LabeledDataset& ds, const NoiseSpec& spec) {
  spec.validate(ds.num_classes);
  switch (spec.kind) {
    case NoiseKind::kSymmetric:
      return inject_symmetric(ds, spec.rate, spec.seed);
    case NoiseKind::kAsymmetric:
      return inject_asymmetric(ds, spec.pairs, spec.rate, spec.seed);
    case NoiseKind::kInstance:
      return inject_instance(ds, *spec.auxiliary, spec.rate, spec.seed);
  }
  throw ConfigError("unhandled noise kind");
}

TransitionMatrix audit_transition(const LabeledDataset& ds) {
  const int c = ds.num_classes;
  TransitionMatrix t;
  t.counts = Eigen::MatrixXd::Zero(c, c);
  for (std::size_t i = 0; i < ds.size(); ++i) t.counts(ds.true_labels[i], ds.given_labels[i]) += 1.0;
  t.probabilities = t.counts;
  t.row_defined.assign(c, true);
  for (int r = 0; r < c; ++r) {
    const double total = t.counts.row(r).sum();
    if (total == 0.0) {
      t.row_defined[r] = false;
      t.probabilities.row(r).setConstant(std::numeric_limits<double>::quiet_NaN());
    } else {
      t.probabilities.row(r) /= total;
    }
  }
  return t;
}

Eigen::MatrixXd symmetric_transition(int classes, double rate) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(classes, classes, rate / (classes - 1));
  m.diagonal().setConstant(1.0 - rate);
  return m;
}

}  // namespace propmix
