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

#include "propmix/harness.h"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "propmix/checkpoint.h"
#include "propmix/error.h"
#include "propmix/logging.h"
#include "propmix/rng.h"

namespace propmix {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Mode m) {
  switch (m) {
    case Mode::kPretrain:
      return "pretrain";
    case Mode::kTrain:
      return "train";
    case Mode::kInject:
      return "inject";
    case Mode::kEval:
      return "eval";
    case Mode::kSweep:
      return "sweep";
    case Mode::kAblation:
      return "ablation";
  }
  return "?";
}

std::string to_string(Method m) {
  switch (m) {
    case Method::kPropMix:
      return "propmix";
    case Method::kCrossEntropy:
      return "ce";
    case Method::kPretrainOnly:
      return "pretrain-only";
  }
  return "?";
}

Mode mode_from_string(const std::string& s) {
  for (Mode m : {Mode::kPretrain, Mode::kTrain, Mode::kInject, Mode::kEval, Mode::kSweep,
                 Mode::kAblation}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown mode '" + s +
                    "' (expected pretrain|train|inject|eval|sweep|ablation)");
}

Method method_from_string(const std::string& s) {
  for (Method m : {Method::kPropMix, Method::kCrossEntropy, Method::kPretrainOnly}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown method '" + s + "' (expected propmix|ce|pretrain-only)");
}

// ---------------------------------------------------------------------------
// Config parsing. Every object is read through a Section, which rejects keys
// it does not know and values of the wrong JSON type.

namespace {

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }
  // Throws on any key that was never read.
  void close() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key " + path_ + "." + key);
    }
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_[key].is_null()) return;
    const json& v = j_[key];
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) {
            throw ConfigError("");
          }
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      out = v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError(path_ + "." + key + " has the wrong type: " + v.dump());
    }
  }

  template <typename T>
  void read_list(const char* key, std::vector<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_[key].is_null()) return;
    const json& v = j_[key];
    if (!v.is_array()) throw ConfigError(path_ + "." + key + " must be an array");
    std::vector<T> tmp;
    for (const auto& e : v) {
      if constexpr (std::is_integral_v<T>) {
        if (!e.is_number_integer()) throw ConfigError(path_ + "." + key + " must hold integers");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!e.is_number()) throw ConfigError(path_ + "." + key + " must hold numbers");
      } else {
        if (!e.is_string()) throw ConfigError(path_ + "." + key + " must hold strings");
      }
      tmp.push_back(e.get<T>());
    }
    out = std::move(tmp);
  }

  std::optional<Section> child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key) || j_[key].is_null()) return std::nullopt;
    return std::optional<Section>(std::in_place, j_[key], path_ + "." + key);
  }

  bool has(const char* key) const { return j_.contains(key) && !j_[key].is_null(); }
  void mark(const char* key) { seen_.insert(key); }
  const json& raw(const char* key) const { return j_[key]; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_augment(Section& s, AugmentSpec& a) {
  std::string mode = a.mode == AugmentMode::kStrong ? "strong" : "standard";
  s.read("mode", mode);
  if (mode == "standard") {
    a.mode = AugmentMode::kStandard;
  } else if (mode == "strong") {
    a.mode = AugmentMode::kStrong;
  } else {
    throw ConfigError("augment mode must be standard|strong, got '" + mode + "'");
  }
  s.read("jitter_sigma", a.jitter_sigma);
  s.read("mask_fraction", a.mask_fraction);
  s.close();
}

json augment_json(const AugmentSpec& a) {
  return {{"mode", a.mode == AugmentMode::kStrong ? "strong" : "standard"},
          {"jitter_sigma", a.jitter_sigma},
          {"mask_fraction", a.mask_fraction}};
}

std::string pairs_to_string(const PairMap& pairs) {
  std::string s;
  for (const auto& [a, b] : pairs) {
    if (!s.empty()) s += ',';
    s += std::to_string(a) + ":" + std::to_string(b);
  }
  return s;
}

}  // namespace

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Section root(j, "config");
  std::string mode = to_string(c.mode);
  root.read("mode", mode);
  c.mode = mode_from_string(mode);
  std::string method = to_string(c.method);
  root.read("method", method);
  c.method = method_from_string(method);
  root.read("use_true_labels", c.use_true_labels);
  root.read_list("seeds", c.seeds);
  root.read("out_dir", c.out_dir);
  root.read("model_checkpoint", c.model_checkpoint);

  if (auto s = root.child("data")) {
    s->read("classes", c.data.classes);
    s->read("train_per_class", c.data.train_per_class);
    s->read("test_per_class", c.data.test_per_class);
    s->read("dim", c.data.dim);
    s->read("separation", c.data.separation);
    s->read("seed", c.data.seed);
    s->read("train_path", c.data.train_path);
    s->read("test_path", c.data.test_path);
    s->close();
  }
  if (auto s = root.child("noise")) {
    std::string kind = to_string(c.noise.kind);
    s->read("kind", kind);
    c.noise.kind = noise_kind_from_string(kind);
    s->read("rate", c.noise.rate);
    std::string pairs;
    s->read("pairs", pairs);
    c.noise.pairs = parse_pair_map(pairs);
    if (s->has("seed")) {
      std::uint64_t seed = 0;
      s->read("seed", seed);
      c.noise.seed = seed;
    } else {
      s->mark("seed");
    }
    s->read("auxiliary", c.noise.auxiliary_path);
    s->close();
  }
  if (auto s = root.child("model")) {
    s->read_list("hidden", c.model.hidden);
    std::string act = to_string(c.model.activation);
    s->read("activation", act);
    c.model.activation = activation_from_string(act);
    s->read("learning_rate", c.model.learning_rate);
    s->read("momentum", c.model.momentum);
    s->read("weight_decay", c.model.weight_decay);
    s->read("lr_drop_factor", c.model.lr_drop_factor);
    s->close();
  }
  if (auto s = root.child("pretrain")) {
    s->read("enabled", c.pretrain.enabled);
    s->read("checkpoint", c.pretrain.checkpoint);
    if (auto cs = s->child("contrastive")) {
      auto& cc = c.pretrain.contrastive;
      cs->read("temperature", cc.temperature);
      cs->read("batch_size", cc.batch_size);
      cs->read("epochs", cc.epochs);
      cs->read("embed_dim", cc.embed_dim);
      cs->read("learning_rate", cc.learning_rate);
      cs->read("momentum", cc.momentum);
      cs->read("weight_decay", cc.weight_decay);
      if (auto as = cs->child("augment")) read_augment(*as, cc.augment);
      cs->close();
    }
    if (auto ss = s->child("scan")) {
      auto& sc = c.pretrain.scan;
      ss->read("entropy_weight", sc.entropy_weight);
      ss->read("epochs", sc.epochs);
      ss->read("neighbors", sc.neighbors);
      ss->read("batch_size", sc.batch_size);
      ss->read("learning_rate", sc.learning_rate);
      ss->read("momentum", sc.momentum);
      ss->read("weight_decay", sc.weight_decay);
      if (auto as = ss->child("augment")) read_augment(*as, sc.augment);
      ss->close();
    }
    s->close();
  }
  if (auto s = root.child("mix")) {
    auto& m = c.mix;
    s->read("augment_count", m.augment_count);
    s->read("sharpen_temperature", m.sharpen_temperature);
    s->read("mixup_alpha", m.mixup_alpha);
    s->read("reg_weight", m.reg_weight);
    s->read("warmup_epochs", m.warmup_epochs);
    s->read("epochs", m.epochs);
    s->read("batch_size", m.batch_size);
    s->read("strong_aug_trigger", m.strong_aug_trigger);
    s->read("filter_hard", m.filter_hard);
    if (auto as = s->child("augment")) read_augment(*as, m.augment);
    s->close();
  }
  if (auto s = root.child("filter")) {
    s->read("clean_threshold", c.filter.clean_threshold);
    s->read("hard_threshold", c.filter.hard_threshold);
    s->read("em_tolerance", c.filter.em_tolerance);
    s->read("em_max_iterations", c.filter.em_max_iterations);
    s->close();
  }
  if (auto s = root.child("sweep")) {
    s->read_list("clean_thresholds", c.sweep.clean_thresholds);
    s->read_list("hard_thresholds", c.sweep.hard_thresholds);
    s->close();
  }
  if (auto s = root.child("ablation")) {
    s->read_list("variants", c.ablation.variants);
    s->read_list("noise_rates", c.ablation.noise_rates);
    s->close();
  }
  root.close();
  return c;
}

json config_to_json(const RunConfig& c) {
  json j;
  j["mode"] = to_string(c.mode);
  j["method"] = to_string(c.method);
  j["use_true_labels"] = c.use_true_labels;
  j["seeds"] = c.seeds;
  j["out_dir"] = c.out_dir;
  j["model_checkpoint"] = c.model_checkpoint;
  j["data"] = {{"classes", c.data.classes},
               {"train_per_class", c.data.train_per_class},
               {"test_per_class", c.data.test_per_class},
               {"dim", c.data.dim},
               {"separation", c.data.separation},
               {"seed", c.data.seed},
               {"train_path", c.data.train_path},
               {"test_path", c.data.test_path}};
  j["noise"] = {{"kind", to_string(c.noise.kind)},
                {"rate", c.noise.rate},
                {"pairs", pairs_to_string(c.noise.pairs)},
                {"seed", c.noise.seed ? json(*c.noise.seed) : json(nullptr)},
                {"auxiliary", c.noise.auxiliary_path}};
  j["model"] = {{"hidden", c.model.hidden},
                {"activation", to_string(c.model.activation)},
                {"learning_rate", c.model.learning_rate},
                {"momentum", c.model.momentum},
                {"weight_decay", c.model.weight_decay},
                {"lr_drop_factor", c.model.lr_drop_factor}};
  const auto& cc = c.pretrain.contrastive;
  const auto& sc = c.pretrain.scan;
  j["pretrain"] = {{"enabled", c.pretrain.enabled},
                   {"checkpoint", c.pretrain.checkpoint},
                   {"contrastive",
                    {{"temperature", cc.temperature},
                     {"batch_size", cc.batch_size},
                     {"epochs", cc.epochs},
                     {"embed_dim", cc.embed_dim},
                     {"learning_rate", cc.learning_rate},
                     {"momentum", cc.momentum},
                     {"weight_decay", cc.weight_decay},
                     {"augment", augment_json(cc.augment)}}},
                   {"scan",
                    {{"entropy_weight", sc.entropy_weight},
                     {"epochs", sc.epochs},
                     {"neighbors", sc.neighbors},
                     {"batch_size", sc.batch_size},
                     {"learning_rate", sc.learning_rate},
                     {"momentum", sc.momentum},
                     {"weight_decay", sc.weight_decay},
                     {"augment", augment_json(sc.augment)}}}};
  const auto& m = c.mix;
  j["mix"] = {{"augment_count", m.augment_count},
              {"sharpen_temperature", m.sharpen_temperature},
              {"mixup_alpha", m.mixup_alpha},
              {"reg_weight", m.reg_weight},
              {"warmup_epochs", m.warmup_epochs},
              {"epochs", m.epochs},
              {"batch_size", m.batch_size},
              {"strong_aug_trigger", m.strong_aug_trigger},
              {"filter_hard", m.filter_hard},
              {"augment", augment_json(m.augment)}};
  j["filter"] = {{"clean_threshold", c.filter.clean_threshold},
                 {"hard_threshold", c.filter.hard_threshold},
                 {"em_tolerance", c.filter.em_tolerance},
                 {"em_max_iterations", c.filter.em_max_iterations}};
  j["sweep"] = {{"clean_thresholds", c.sweep.clean_thresholds},
                {"hard_thresholds", c.sweep.hard_thresholds}};
  j["ablation"] = {{"variants", c.ablation.variants}, {"noise_rates", c.ablation.noise_rates}};
  return j;
}

RunConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
  json j;
  try {
    j = read_json_file(path);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  return config_from_json(j);
}

void RunConfig::validate() const {
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  auto must_exist = [](const std::string& p, const char* what) {
    if (!p.empty() && !fs::exists(p)) {
      throw ConfigError(std::string(what) + " '" + p + "' does not exist");
    }
  };
  must_exist(data.train_path, "data.train_path");
  must_exist(data.test_path, "data.test_path");
  must_exist(noise.auxiliary_path, "noise.auxiliary");
  must_exist(pretrain.checkpoint, "pretrain.checkpoint");
  must_exist(model_checkpoint, "model_checkpoint");
  if (data.train_path.empty()) {
    if (data.classes < 2) throw ConfigError("data.classes must be >= 2");
    if (data.train_per_class < 1 || data.test_per_class < 1) {
      throw ConfigError("data.*_per_class must be >= 1");
    }
    if (data.dim < data.classes) throw ConfigError("data.dim must be >= data.classes");
    if (!(data.separation > 0.0)) throw ConfigError("data.separation must be > 0");
  } else if (data.test_path.empty() && mode != Mode::kPretrain && mode != Mode::kInject) {
    throw ConfigError("data.test_path is required with data.train_path");
  }
  if (!(noise.rate >= 0.0 && noise.rate <= 1.0)) throw ConfigError("noise.rate must be in [0,1]");
  if (noise.kind == NoiseKind::kAsymmetric && noise.rate > 0.0 && noise.pairs.empty()) {
    throw ConfigError("noise.pairs is required for asymmetric noise");
  }
  if (model.hidden.empty()) throw ConfigError("model.hidden needs at least one layer");
  for (int h : model.hidden) {
    if (h < 1) throw ConfigError("model.hidden widths must be positive");
  }
  if (!(model.learning_rate >= 0.0)) throw ConfigError("model.learning_rate must be >= 0");
  if (!(model.momentum >= 0.0 && model.momentum < 1.0)) {
    throw ConfigError("model.momentum must be in [0,1)");
  }
  if (!(model.weight_decay >= 0.0)) throw ConfigError("model.weight_decay must be >= 0");
  if (!(model.lr_drop_factor > 0.0)) throw ConfigError("model.lr_drop_factor must be > 0");
  pretrain.contrastive.validate();
  pretrain.scan.validate();
  mix.validate();
  filter.validate();
  if (sweep.clean_thresholds.empty() || sweep.hard_thresholds.empty()) {
    throw ConfigError("sweep grids must be nonempty");
  }
  for (double t : sweep.clean_thresholds) {
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("sweep.clean_thresholds must lie in (0,1)");
  }
  for (double t : sweep.hard_thresholds) {
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("sweep.hard_thresholds must lie in (0,1)");
  }
  for (const auto& v : ablation.variants) apply_variant(*this, v);
  for (double r : ablation.noise_rates) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("ablation.noise_rates must lie in [0,1]");
  }
  if (mode == Mode::kEval && model_checkpoint.empty()) {
    throw ConfigError("eval mode needs model_checkpoint");
  }
}

std::string config_hash(const RunConfig& cfg) {
  json j = config_to_json(cfg);
  j.erase("out_dir");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

// ---------------------------------------------------------------------------

void RunReport::finalize() {
  if (rows.empty()) return;
  best_acc = rows.front().test_acc;
  for (const auto& r : rows) best_acc = std::max(best_acc, r.test_acc);
  final_acc = rows.back().test_acc;
  if (rows.size() >= 10) {
    double sum = 0.0;
    for (std::size_t i = rows.size() - 10; i < rows.size(); ++i) sum += rows[i].test_acc;
    last10_acc = sum / 10.0;
  } else {
    last10_acc = final_acc;
  }
}

ParamSet train_auxiliary(const LabeledDataset& ds, std::uint64_t seed) {
  const std::vector<int> dims{ds.dim(), 32, ds.num_classes};
  Network net{init_mlp(dims, Activation::kRelu, Head::kClassifier, derive_seed(seed, "aux_init")),
              {}};
  net.optim = OptimState::for_params(net.params, 0.02, 0.9, 5e-4);
  for (int e = 0; e < 5; ++e) {
    net = train_ce_epoch(std::move(net), ds.features, ds.true_labels, ds.num_classes, 64,
                         derive_seed(seed, "aux_epoch", e));
  }
  return net.params;
}

PreparedData prepare_data(const RunConfig& cfg, std::uint64_t seed) {
  PreparedData d;
  if (!cfg.data.train_path.empty()) {
    d.train = load_dataset(cfg.data.train_path);
    if (!cfg.data.test_path.empty()) d.test = load_dataset(cfg.data.test_path);
  } else {
    const auto& dc = cfg.data;
    d.train = make_synthetic(dc.classes, dc.train_per_class, dc.dim, dc.separation, dc.seed, 0);
    d.test = make_synthetic(dc.classes, dc.test_per_class, dc.dim, dc.separation, dc.seed, 1);
  }
  if (cfg.noise.rate > 0.0) {
    NoiseSpec spec;
    spec.kind = cfg.noise.kind;
    spec.rate = cfg.noise.rate;
    spec.pairs = cfg.noise.pairs;
    spec.seed = cfg.noise.seed ? *cfg.noise.seed : derive_seed(seed, "noise");
    if (spec.kind == NoiseKind::kInstance) {
      spec.auxiliary = cfg.noise.auxiliary_path.empty()
                           ? train_auxiliary(d.train, derive_seed(spec.seed, "auxiliary"))
                           : load_paramset(cfg.noise.auxiliary_path);
    }
    d.train = inject_noise(d.train, spec);
  }
  return d;
}

std::uint64_t pretrain_seed(std::uint64_t run_seed) { return derive_seed(run_seed, "pretrain"); }

namespace {

PretrainResult compute_pretrain(const Matrix& features, int num_clusters, const RunConfig& cfg,
                                std::uint64_t seed) {
  if (!cfg.pretrain.checkpoint.empty()) {
    PretrainResult r = pretrain_from_json(read_json_file(cfg.pretrain.checkpoint));
    if (r.cluster_model.input_dim() != features.cols() ||
        r.cluster_model.output_dim() != num_clusters || r.neighbors.n != features.rows()) {
      throw ConfigError("pretrain checkpoint does not match the dataset");
    }
    return r;
  }
  return pretrain(features, num_clusters, cfg.model.hidden, cfg.model.activation,
                  cfg.pretrain.contrastive, cfg.pretrain.scan, seed);
}

std::string features_digest(const Matrix& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
  for (std::size_t i = 0; i < static_cast<std::size_t>(m.size()) * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return std::to_string(h) + ":" + std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

const PretrainResult& PretrainCache::get(const Matrix& features, int num_clusters,
                                         const RunConfig& cfg, std::uint64_t seed) {
  const json key_json{{"pretrain", config_to_json(cfg)["pretrain"]},
                      {"hidden", cfg.model.hidden},
                      {"activation", to_string(cfg.model.activation)},
                      {"clusters", num_clusters},
                      {"seed", seed},
                      {"features", features_digest(features)}};
  const std::string key = key_json.dump();
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = entries_.find(key);
    if (it != entries_.end()) return *it->second;
  }
  auto result = std::make_unique<PretrainResult>(compute_pretrain(features, num_clusters, cfg, seed));
  std::lock_guard<std::mutex> lock(mu_);
  auto [it, inserted] = entries_.emplace(key, std::move(result));
  return *it->second;
}

// ---------------------------------------------------------------------------
// Metrics files.

namespace {

std::string opt_field(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }

// Streams metrics rows to `metrics.csv.partial`; `finish` renames it to
// `metrics.csv`, `fail` leaves a marked partial file behind.
class MetricsWriter {
 public:
  explicit MetricsWriter(const fs::path& dir) : dir_(dir) {
    fs::create_directories(dir_);
    fs::remove(dir_ / "metrics.csv");
    fs::remove(dir_ / "FAILED");
    out_.open(partial());
    if (!out_) throw std::runtime_error("cannot write " + partial().string());
    out_ << metrics_csv_header() << '\n';
    out_.flush();
  }

  void row(const EpochStats& s, bool has_filter) {
    out_ << metrics_csv_row(s, has_filter) << '\n';
    out_.flush();
  }

  fs::path finish() {
    out_.close();
    fs::rename(partial(), dir_ / "metrics.csv");
    return dir_ / "metrics.csv";
  }

  void fail(const std::string& message) {
    if (out_.is_open()) {
      out_ << "#FAILED: " << message << '\n';
      out_.close();
    }
    std::ofstream marker(dir_ / "FAILED");
    marker << message << '\n';
  }

 private:
  fs::path partial() const { return dir_ / "metrics.csv.partial"; }
  fs::path dir_;
  std::ofstream out_;
};

}  // namespace

std::string metrics_csv_header() {
  return "epoch,test_acc,est_noise_rate,zeta,n_clean,n_easy,n_hard,clean_precision,"
         "clean_recall,hard_precision,hard_recall,relabel_acc,train_loss";
}

std::string metrics_csv_row(const EpochStats& s, bool has_filter) {
  std::ostringstream os;
  os << s.epoch << ',' << format_double(s.test_acc) << ',';
  if (has_filter) {
    os << format_double(s.est_noise_rate) << ',' << format_double(s.zeta()) << ',' << s.n_clean
       << ',' << s.n_easy << ',' << s.n_hard << ',' << opt_field(s.filter.clean_precision) << ','
       << opt_field(s.filter.clean_recall) << ',' << opt_field(s.filter.hard_precision) << ','
       << opt_field(s.filter.hard_recall) << ',' << opt_field(s.filter.relabel_acc) << ',';
  } else {
    os << "NA,NA,NA,NA,NA,NA,NA,NA,NA,NA,";
  }
  os << format_double(s.train_loss);
  return os.str();
}

json summary_json(const RunReport& r) {
  return {{"config_hash", r.config_hash},
          {"best_acc", r.best_acc},
          {"last10_acc", r.last10_acc},
          {"epochs", r.rows.size()},
          {"seed", r.seed},
          {"wall_clock_s", r.wall_clock_s}};
}

std::vector<fs::path> emit_metrics(const RunReport& report, const fs::path& dir) {
  if (report.rows.empty()) throw std::runtime_error("cannot emit metrics for an empty report");
  fs::create_directories(dir);
  const fs::path csv = dir / "metrics.csv";
  std::ofstream out(csv);
  if (!out) throw std::runtime_error("cannot write " + csv.string());
  out << metrics_csv_header() << '\n';
  for (const auto& r : report.rows) out << metrics_csv_row(r, report.has_filter_stats) << '\n';
  out.close();
  if (!out) throw std::runtime_error("write failed for " + csv.string());
  const fs::path summary = dir / "summary.json";
  write_json_file(summary, summary_json(report));
  return {csv, summary};
}

MetricsTable read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  MetricsTable t;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty metrics file", 0);
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) t.columns.push_back(cell);
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::optional<double>> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (cell == "NA") {
        row.push_back(std::nullopt);
        continue;
      }
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw ParseError("bad metrics value '" + cell + "'", line_no);
      }
      row.push_back(v);
    }
    if (row.size() != t.columns.size()) throw ParseError("wrong column count", line_no);
    t.rows.push_back(std::move(row));
  }
  return t;
}

void save_co_models(const fs::path& path, const CoModels& models) {
  write_json_file(path, {{"format", "propmix-comodels"},
                         {"version", 1},
                         {"a", paramset_to_json(models.a.params)},
                         {"b", paramset_to_json(models.b.params)}});
}

CoModels load_co_models(const fs::path& path) {
  const json j = read_json_file(path);
  if (j.value("format", std::string{}) != "propmix-comodels" || j.value("version", 0) != 1) {
    throw ParseError(path.string() + " is not a version-1 propmix-comodels checkpoint", 0);
  }
  CoModels m;
  m.a.params = paramset_from_json(j.at("a"));
  m.b.params = paramset_from_json(j.at("b"));
  m.a.optim = OptimState::for_params(m.a.params, 0.0, 0.0, 0.0);
  m.b.optim = OptimState::for_params(m.b.params, 0.0, 0.0, 0.0);
  return m;
}

// ---------------------------------------------------------------------------
// Runs.

namespace {

void install_schedule(CoModels& models, const RunConfig& cfg) {
  const int drop_at = cfg.mix.warmup_epochs + (cfg.mix.epochs + 1) / 2;
  for (int k = 0; k < 2; ++k) {
    models.net(k).optim.schedule = {
        {0, cfg.model.learning_rate},
        {drop_at, cfg.model.learning_rate * cfg.model.lr_drop_factor}};
  }
}

}  // namespace

RunReport run_experiment(const RunConfig& cfg, std::uint64_t seed, const RunOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  RunReport report;
  report.config_hash = config_hash(cfg);
  report.seed = seed;
  report.method = cfg.method;
  report.has_filter_stats = cfg.method == Method::kPropMix;

  std::optional<MetricsWriter> writer;
  if (opts.output_dir) writer.emplace(*opts.output_dir);
  try {
    PreparedData data = prepare_data(cfg, seed);
    if (cfg.use_true_labels) data.train.given_labels = data.train.true_labels;
    if (data.test.size() == 0) throw ConfigError("a test set is required for training runs");
    const int classes = data.train.num_classes;

    std::optional<PretrainResult> local_pretrain;
    const PretrainResult* pre = nullptr;
    if (cfg.pretrain.enabled || cfg.method == Method::kPretrainOnly) {
      if (opts.cache) {
        pre = &opts.cache->get(data.train.features, classes, cfg, pretrain_seed(seed));
      } else {
        local_pretrain = compute_pretrain(data.train.features, classes, cfg, pretrain_seed(seed));
        pre = &*local_pretrain;
      }
    }

    if (cfg.method == Method::kPretrainOnly) {
      // Cluster ids are matched to classes on the test set for evaluation only.
      const auto clusters = argmax_rows(forward(pre->cluster_model, data.test.features));
      const auto mapping = match_clusters(clusters, data.test.true_labels, classes);
      std::vector<int> preds(clusters.size());
      for (std::size_t i = 0; i < clusters.size(); ++i) preds[i] = mapping[clusters[i]];
      EpochStats row;
      row.test_acc = accuracy(preds, data.test.true_labels);
      report.rows.push_back(row);
      if (writer) writer->row(row, false);
    } else {
      std::optional<ParamSet> init;
      if (pre) init = pre->cluster_model;
      CoModels models = make_co_models(data.train.dim(), cfg.model.hidden, classes,
                                       cfg.model.activation, init, cfg.model.learning_rate,
                                       cfg.model.momentum, cfg.model.weight_decay,
                                       derive_seed(seed, "models"));
      install_schedule(models, cfg);
      const int warm = cfg.mix.warmup_epochs;
      if (cfg.method == Method::kPropMix) {
        models = warmup(std::move(models), data.train, warm, cfg.mix.batch_size,
                        derive_seed(seed, "warmup"));
        for (int e = 0; e < cfg.mix.epochs; ++e) {
          ContributionLog log;
          auto [next, stats] = train_epoch(std::move(models), data.train, cfg.mix, cfg.filter,
                                           warm + e, derive_seed(seed, "train"),
                                           opts.on_epoch ? &log : nullptr);
          models = std::move(next);
          stats.epoch = e;
          stats.test_acc = evaluate(models, data.test);
          report.rows.push_back(stats);
          if (writer) writer->row(stats, true);
          if (opts.on_epoch) opts.on_epoch(stats, log);
          log_info("seed " + std::to_string(seed) + " epoch " + std::to_string(e) +
                   " acc " + format_double(stats.test_acc));
        }
      } else {
        const auto& labels = data.train.given_labels;
        for (int e = 0; e < warm + cfg.mix.epochs; ++e) {
          set_epoch(models, e);
          double loss = 0.0;
          for (int k = 0; k < 2; ++k) {
            models.net(k) = train_ce_epoch(std::move(models.net(k)), data.train.features, labels,
                                           classes, cfg.mix.batch_size,
                                           derive_seed(seed, k == 0 ? "ce_a" : "ce_b", e));
            const Matrix probs = softmax(forward(models.net(k).params, data.train.features));
            loss += cross_entropy(probs, data.train.one_hot_given()) / 2.0;
          }
          if (e < warm) continue;
          EpochStats row;
          row.epoch = e - warm;
          row.test_acc = evaluate(models, data.test);
          row.train_loss = loss;
          report.rows.push_back(row);
          if (writer) writer->row(row, false);
        }
      }
      if (opts.keep_models) report.models = models;
      if (opts.output_dir) {
        const fs::path ckpt = *opts.output_dir / "models.json";
        save_co_models(ckpt, models);
        report.artifacts.push_back(ckpt.string());
      }
    }
    report.finalize();
    report.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (writer) {
      report.artifacts.push_back(writer->finish().string());
      const fs::path summary = *opts.output_dir / "summary.json";
      write_json_file(summary, summary_json(report));
      report.artifacts.push_back(summary.string());
    }
  } catch (const std::exception& e) {
    if (writer) writer->fail(e.what());
    throw;
  }
  return report;
}

std::vector<SweepRow> sweep_thresholds(const RunConfig& base, const RunOptions& opts) {
  base.validate();
  std::vector<SweepRow> rows;
  for (double tau : base.sweep.clean_thresholds) {
    for (double tau_p : base.sweep.hard_thresholds) {
      for (std::uint64_t seed : base.seeds) {
        RunConfig cfg = base;
        cfg.filter.clean_threshold = tau;
        cfg.filter.hard_threshold = tau_p;
        RunOptions o = opts;
        if (opts.output_dir) {
          o.output_dir = *opts.output_dir / ("tau_" + format_double(tau) + "_taup_" +
                                             format_double(tau_p)) /
                         ("seed_" + std::to_string(seed));
        }
        const RunReport r = run_experiment(cfg, seed, o);
        rows.push_back({tau, tau_p, seed, r.best_acc, r.last10_acc, r.final_acc});
      }
    }
  }
  return rows;
}

void write_sweep_csv(const fs::path& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "tau,tau_prime,seed,best_acc,last10_acc,final_acc\n";
  for (const auto& r : rows) {
    out << format_double(r.clean_threshold) << ',' << format_double(r.hard_threshold) << ','
        << r.seed << ',' << format_double(r.best_acc) << ',' << format_double(r.last10_acc) << ','
        << format_double(r.final_acc) << '\n';
  }
}

RunConfig apply_variant(RunConfig cfg, const std::string& variant) {
  if (variant == "full") {
    cfg.method = Method::kPropMix;
  } else if (variant == "no-filter") {
    cfg.method = Method::kPropMix;
    cfg.mix.filter_hard = false;
  } else if (variant == "no-pretrain") {
    cfg.method = Method::kPropMix;
    cfg.pretrain.enabled = false;
  } else if (variant == "pretrain-only") {
    cfg.method = Method::kPretrainOnly;
    cfg.pretrain.enabled = true;
  } else {
    std::string valid;
    for (const auto& id : ablation_variant_ids()) valid += (valid.empty() ? "" : ", ") + id;
    throw ConfigError("unknown ablation variant '" + variant + "'; valid ids: " + valid);
  }
  return cfg;
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const RunOptions& opts) {
  base.validate();
  std::vector<AblationRow> rows;
  for (const auto& variant : base.ablation.variants) {
    const RunConfig vcfg = apply_variant(base, variant);
    for (double rate : base.ablation.noise_rates) {
      for (std::uint64_t seed : base.seeds) {
        RunConfig cfg = vcfg;
        cfg.noise.rate = rate;
        RunOptions o = opts;
        if (opts.output_dir) {
          o.output_dir = *opts.output_dir / variant / ("rate_" + format_double(rate)) /
                         ("seed_" + std::to_string(seed));
        }
        const RunReport r = run_experiment(cfg, seed, o);
        rows.push_back({variant, rate, seed, r.final_acc, r.best_acc});
      }
    }
  }
  return rows;
}

void write_ablation_csv(const fs::path& path, const std::vector<AblationRow>& rows) {
  std::vector<std::string> variants;
  std::vector<double> rates;
  for (const auto& r : rows) {
    if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) {
      variants.push_back(r.variant);
    }
    if (std::find(rates.begin(), rates.end(), r.noise_rate) == rates.end()) {
      rates.push_back(r.noise_rate);
    }
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "variant";
  for (double rate : rates) out << ",rate_" << format_double(rate);
  out << '\n';
  for (const auto& v : variants) {
    out << v;
    for (double rate : rates) {
      double sum = 0.0;
      int count = 0;
      for (const auto& r : rows) {
        if (r.variant == v && r.noise_rate == rate) {
          sum += r.final_acc;
          ++count;
        }
      }
      out << ',' << (count ? format_double(sum / count) : "NA");
    }
    out << '\n';
  }
}

}  // namespace propmix
