// Copyright 2026 The Churn Lab Authors. All rights reserved.
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

// JSON run documents and flat LearnerConfig overrides.

#ifndef CHURN_LAB_CONFIG_H_
#define CHURN_LAB_CONFIG_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "churn_lab/learners.h"

namespace churn_lab {

// Names accepted in an "overrides" object, one per LearnerConfig field.
const std::vector<std::string>& override_keys();

// Applies a flat key -> value map onto `config`. Unknown keys and wrongly
// typed values throw ValidationError naming the key. The result is validated.
void apply_overrides(LearnerConfig& config, const nlohmann::json& overrides);

// Inverse of apply_overrides for every field.
nlohmann::json config_to_json(const LearnerConfig& config);

struct RunConfigDocument {
  std::optional<std::string> suite;
  std::string variant;
  std::vector<uint64_t> seeds;
  nlohmann::json overrides = nlohmann::json::object();
  std::optional<std::string> out_dir;
};

// Keys: suite (optional), variant, seed | seeds (count or list), overrides,
// out_dir. Anything else is rejected.
RunConfigDocument parse_run_config(const std::string& text);
RunConfigDocument load_run_config(const std::string& path);

}  // namespace churn_lab

#endif  // CHURN_LAB_CONFIG_H_
