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

#include "propmix/checkpoint.h"

#include <fstream>

#include "propmix/error.h"

namespace propmix {

namespace {
constexpr int kParamSetVersion = 1;
}

nlohmann::json paramset_to_json(const ParamSet& params, std::optional<RngPosition> rng) {
  params.validate();
  nlohmann::json j;
  j["format"] = "propmix-paramset";
  j["version"] = kParamSetVersion;
  j["activation"] = to_string(params.activation);
  j["head"] = to_string(params.head);
  auto& layers = j["layers"] = nlohmann::json::array();
  for (const auto& l : params.layers) {
    nlohmann::json lj;
    lj["in"] = l.in();
    lj["out"] = l.out();
    lj["weight"] = std::vector<double>(l.weight.data(), l.weight.data() + l.weight.size());
    lj["bias"] = std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size());
    layers.push_back(std::move(lj));
  }
  if (rng) j["rng"] = {{"seed", rng->seed}, {"position", rng->position}};
  return j;
}

ParamSet paramset_from_json(const nlohmann::json& j, RngPosition* rng) {
  try {
    if (j.at("format").get<std::string>() != "propmix-paramset") {
      throw ParseError("not a propmix-paramset checkpoint", 0);
    }
    if (j.at("version").get<int>() != kParamSetVersion) {
      throw ParseError("unsupported checkpoint version " + j.at("version").dump(), 0);
    }
    ParamSet p;
    p.activation = activation_from_string(j.at("activation").get<std::string>());
    p.head = head_from_string(j.at("head").get<std::string>());
    for (const auto& lj : j.at("layers")) {
      const int in = lj.at("in").get<int>();
      const int out = lj.at("out").get<int>();
      const auto w = lj.at("weight").get<std::vector<double>>();
      const auto b = lj.at("bias").get<std::vector<double>>();
      if (in < 1 || out < 1 || w.size() != static_cast<std::size_t>(in) * out ||
          b.size() != static_cast<std::size_t>(out)) {
        throw ParseError("layer arrays do not match declared dims", 0);
      }
      DenseLayer layer{Matrix(out, in), Vector(out)};
      std::copy(w.begin(), w.end(), layer.weight.data());
      std::copy(b.begin(), b.end(), layer.bias.data());
      p.layers.push_back(std::move(layer));
    }
    p.validate();
    if (rng && j.contains("rng")) {
      rng->seed = j["rng"].at("seed").get<std::uint64_t>();
      rng->position = j["rng"].at("position").get<std::uint64_t>();
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what(), 0);
  }
}

void save_paramset(const std::filesystem::path& path, const ParamSet& params,
                   std::optional<RngPosition> rng) {
  write_json_file(path, paramset_to_json(params, rng));
}

ParamSet load_paramset(const std::filesystem::path& path, RngPosition* rng) {
  return paramset_from_json(read_json_file(path), rng);
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace propmix
