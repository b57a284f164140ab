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

#ifndef PROPMIX_CHECKPOINT_H_
#define PROPMIX_CHECKPOINT_H_

// JSON checkpoints for ParamSet. Format (version 1):
//
//   {
//     "format": "propmix-paramset", "version": 1,
//     "activation": "relu" | "tanh", "head": "classifier" | "embedder",
//     "layers": [ {"in": I, "out": O, "weight": [O*I row-major], "bias": [O]} ... ],
//     "rng": {"seed": S, "position": P}        // optional
//   }
//
// Doubles are written in shortest round-trip form, so save/load is exact.

#include <cstdint>
#include <filesystem>
#include <optional>

#include <nlohmann/json.hpp>

#include "propmix/backbone.h"

namespace propmix {

struct RngPosition {
  std::uint64_t seed = 0;
  std::uint64_t position = 0;
};

nlohmann::json paramset_to_json(const ParamSet& params,
                                 std::optional<RngPosition> rng = std::nullopt);
ParamSet paramset_from_json(const nlohmann::json& j, RngPosition* rng = nullptr);

void save_paramset(const std::filesystem::path& path, const ParamSet& params,
                   std::optional<RngPosition> rng = std::nullopt);
ParamSet load_paramset(const std::filesystem::path& path, RngPosition* rng = nullptr);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace propmix

#endif  // PROPMIX_CHECKPOINT_H_
