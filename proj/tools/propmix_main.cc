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

// Command-line entry point.
//
//   propmix <pretrain|train|eval|sweep|ablation> --config FILE [--seed N] [--out DIR]
//   propmix inject-noise --kind sym|asym|instance --rate R --seed S --in F --out G
//                        [--pairs "0:1,1:0"] [--aux FILE]
//
// Exit codes: 0 success, 2 configuration or input error, 3 runtime failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "propmix/checkpoint.h"
#include "propmix/error.h"
#include "propmix/harness.h"
#include "propmix/logging.h"

namespace fs = std::filesystem;
using namespace propmix;

namespace {

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config, "run config JSON")->required();
  sub->add_option("--seed", args.seed, "override the config seed list with one seed");
  sub->add_option("--out", args.out, "output directory (overrides out_dir)");
}

RunConfig load(const CommonArgs& args, Mode mode) {
  RunConfig cfg = load_config(args.config);
  cfg.mode = mode;
  if (args.seed) cfg.seeds = {*args.seed};
  if (!args.out.empty()) cfg.out_dir = args.out;
  if (cfg.out_dir.empty()) cfg.out_dir = "runs/" + config_hash(cfg);
  cfg.validate();
  return cfg;
}

fs::path seed_dir(const RunConfig& cfg, std::uint64_t seed) {
  return fs::path(cfg.out_dir) / ("seed_" + std::to_string(seed));
}

int cmd_pretrain(const CommonArgs& args) {
  RunConfig cfg = load(args, Mode::kPretrain);
  for (std::uint64_t seed : cfg.seeds) {
    PreparedData data = prepare_data(cfg, seed);
    const PretrainResult r =
        pretrain(data.train.features, data.train.num_classes, cfg.model.hidden,
                 cfg.model.activation, cfg.pretrain.contrastive, cfg.pretrain.scan,
                 pretrain_seed(seed));
    const fs::path dir = seed_dir(cfg, seed);
    fs::create_directories(dir);
    write_json_file(dir / "pretrain.json", pretrain_to_json(r));
    const double purity = knn_purity(r.neighbors, data.train.true_labels);
    std::cout << "seed " << seed << " knn_purity " << format_double(purity) << " -> "
              << (dir / "pretrain.json").string() << '\n';
  }
  return 0;
}

int cmd_train(const CommonArgs& args) {
  RunConfig cfg = load(args, Mode::kTrain);
  PretrainCache cache;
  for (std::uint64_t seed : cfg.seeds) {
    RunOptions opts;
    opts.cache = &cache;
    opts.output_dir = seed_dir(cfg, seed);
    const RunReport r = run_experiment(cfg, seed, opts);
    std::cout << "seed " << seed << " best_acc " << format_double(r.best_acc) << " last10_acc "
              << format_double(r.last10_acc) << " -> " << opts.output_dir->string() << '\n';
  }
  return 0;
}

int cmd_eval(const CommonArgs& args) {
  RunConfig cfg = load(args, Mode::kEval);
  const CoModels models = load_co_models(cfg.model_checkpoint);
  for (std::uint64_t seed : cfg.seeds) {
    PreparedData data = prepare_data(cfg, seed);
    if (data.test.size() == 0) throw ConfigError("eval needs a test set");
    std::cout << "seed " << seed << " test_acc " << format_double(evaluate(models, data.test))
              << '\n';
  }
  return 0;
}

int cmd_sweep(const CommonArgs& args) {
  RunConfig cfg = load(args, Mode::kSweep);
  PretrainCache cache;
  RunOptions opts;
  opts.cache = &cache;
  opts.output_dir = fs::path(cfg.out_dir);
  const auto rows = sweep_thresholds(cfg, opts);
  const fs::path csv = fs::path(cfg.out_dir) / "sweep.csv";
  write_sweep_csv(csv, rows);
  std::cout << csv.string() << '\n';
  return 0;
}

int cmd_ablation(const CommonArgs& args) {
  RunConfig cfg = load(args, Mode::kAblation);
  PretrainCache cache;
  RunOptions opts;
  opts.cache = &cache;
  opts.output_dir = fs::path(cfg.out_dir);
  const auto rows = run_ablation(cfg, opts);
  const fs::path csv = fs::path(cfg.out_dir) / "ablation.csv";
  write_ablation_csv(csv, rows);
  std::cout << csv.string() << '\n';
  return 0;
}

struct InjectArgs {
  std::string kind;
  double rate = 0.0;
  std::uint64_t seed = 0;
  std::string in;
  std::string out;
  std::string pairs;
  std::string aux;
};

int cmd_inject(const InjectArgs& a) {
  NoiseSpec spec;
  spec.kind = noise_kind_from_string(a.kind);
  spec.rate = a.rate;
  spec.seed = a.seed;
  spec.pairs = parse_pair_map(a.pairs);
  if (!a.aux.empty()) spec.auxiliary = load_paramset(a.aux);
  const LabeledDataset ds = load_dataset(a.in);
  spec.validate(ds.num_classes);
  const LabeledDataset noisy = inject_noise(ds, spec);
  save_dataset(a.out, noisy);
  std::cout << "noise_fraction " << format_double(noisy.noise_fraction()) << " -> " << a.out
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PropMix noisy-label training"};
  app.require_subcommand(1);
  bool verbose = false;
  bool quiet = false;
  app.add_flag("-v,--verbose", verbose, "log per-epoch progress");
  app.add_flag("-q,--quiet", quiet, "suppress warnings");

  CommonArgs pre_args, train_args, eval_args, sweep_args, abl_args;
  auto* pre = app.add_subcommand("pretrain", "self-supervised pretraining only");
  add_common(pre, pre_args);
  auto* train = app.add_subcommand("train", "train and write metrics per seed");
  add_common(train, train_args);
  auto* eval = app.add_subcommand("eval", "evaluate a saved co-model checkpoint");
  add_common(eval, eval_args);
  auto* sweep = app.add_subcommand("sweep", "grid over clean and hard thresholds");
  add_common(sweep, sweep_args);
  auto* abl = app.add_subcommand("ablation", "ablation variants across noise rates");
  add_common(abl, abl_args);

  InjectArgs inj;
  auto* inject = app.add_subcommand("inject-noise", "add label noise to a dataset CSV");
  inject->add_option("--kind", inj.kind, "sym|asym|instance")->required();
  inject->add_option("--rate", inj.rate, "noise rate in [0,1]")->required();
  inject->add_option("--seed", inj.seed, "noise seed")->required();
  inject->add_option("--in", inj.in, "input dataset CSV")->required();
  inject->add_option("--out", inj.out, "output dataset CSV")->required();
  inject->add_option("--pairs", inj.pairs, "asymmetric map, e.g. 0:1,1:0");
  inject->add_option("--aux", inj.aux, "auxiliary classifier checkpoint (instance)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  set_log_level(quiet ? LogLevel::kQuiet : verbose ? LogLevel::kInfo : LogLevel::kWarning);

  try {
    if (*pre) return cmd_pretrain(pre_args);
    if (*train) return cmd_train(train_args);
    if (*eval) return cmd_eval(eval_args);
    if (*sweep) return cmd_sweep(sweep_args);
    if (*abl) return cmd_ablation(abl_args);
    if (*inject) return cmd_inject(inj);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
