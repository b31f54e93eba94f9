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

#include "churn_lab/config.h"

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "churn_lab/errors.h"

namespace churn_lab {

using nlohmann::json;

namespace {

[[noreturn]] void bad_type(const std::string& key, const char* expected) {
  throw ValidationError("override '" + key + "' must be " + expected);
}

double as_number(const std::string& key, const json& v) {
  if (!v.is_number()) bad_type(key, "a number");
  return v.get<double>();
}

int64_t as_integer(const std::string& key, const json& v) {
  if (!v.is_number_integer()) bad_type(key, "an integer");
  return v.get<int64_t>();
}

int as_int(const std::string& key, const json& v) {
  const int64_t x = as_integer(key, v);
  if (x < INT32_MIN || x > INT32_MAX) bad_type(key, "a 32-bit integer");
  return static_cast<int>(x);
}

struct Field {
  std::string key;
  std::function<void(LearnerConfig&, const json&)> set;
  std::function<json(const LearnerConfig&)> get;
};

#define CHURN_LAB_FIELD(name, convert)                                             \
  Field {                                                                          \
    #name, [](LearnerConfig& c, const json& v) { c.name = convert(#name, v); },     \
        [](const LearnerConfig& c) { return json(c.name); }                        \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> kFields = {
      Field{"variant",
            [](LearnerConfig& c, const json& v) {
              if (!v.is_string()) bad_type("variant", "a string");
              c.variant = parse_variant(v.get<std::string>());
            },
            [](const LearnerConfig& c) { return json(variant_name(c.variant)); }},
      CHURN_LAB_FIELD(learning_rate, as_number),
      CHURN_LAB_FIELD(learning_rate_end, as_number),
      CHURN_LAB_FIELD(anneal_steps, as_integer),
      CHURN_LAB_FIELD(batch_size, as_int),
      Field{"optimizer",
            [](LearnerConfig& c, const json& v) {
              if (!v.is_string()) bad_type("optimizer", "a string");
              c.optimizer = parse_optimizer(v.get<std::string>());
            },
            [](const LearnerConfig& c) { return json(optimizer_name(c.optimizer)); }},
      CHURN_LAB_FIELD(optimizer_epsilon, as_number),
      CHURN_LAB_FIELD(rmsprop_decay, as_number),
      CHURN_LAB_FIELD(adam_beta1, as_number),
      CHURN_LAB_FIELD(adam_beta2, as_number),
      CHURN_LAB_FIELD(exploration_epsilon, as_number),
      Field{"hidden_layers",
            [](LearnerConfig& c, const json& v) {
              if (!v.is_array()) bad_type("hidden_layers", "an array of integers");
              std::vector<int> sizes;
              for (const json& x : v) sizes.push_back(as_int("hidden_layers", x));
              c.hidden_layers = std::move(sizes);
            },
            [](const LearnerConfig& c) { return json(c.hidden_layers); }},
      CHURN_LAB_FIELD(replay_capacity, as_int),
      CHURN_LAB_FIELD(acting_interval, as_integer),
      CHURN_LAB_FIELD(target_interval, as_integer),
      CHURN_LAB_FIELD(gap_coefficient, as_number),
      CHURN_LAB_FIELD(trainable_top_layers, as_int),
      CHURN_LAB_FIELD(episode_budget, as_integer),
      CHURN_LAB_FIELD(convergence_check_interval, as_integer),
      CHURN_LAB_FIELD(min_post_updates, as_integer),
      CHURN_LAB_FIELD(post_multiple, as_integer),
      Field{"record_switches",
            [](LearnerConfig& c, const json& v) {
              if (!v.is_boolean()) bad_type("record_switches", "a boolean");
              c.record_switches = v.get<bool>();
            },
            [](const LearnerConfig& c) { return json(c.record_switches); }},
  };
  return kFields;
}

#undef CHURN_LAB_FIELD

}  // namespace

const std::vector<std::string>& override_keys() {
  static const std::vector<std::string> kKeys = [] {
    std::vector<std::string> keys;
    for (const Field& f : fields()) keys.push_back(f.key);
    return keys;
  }();
  return kKeys;
}

void apply_overrides(LearnerConfig& config, const json& overrides) {
  if (!overrides.is_object()) throw ValidationError("'overrides' must be an object");
  // Variant first so the remaining keys land on the intended variant.
  if (overrides.contains("variant")) fields().front().set(config, overrides.at("variant"));
  for (auto it = overrides.begin(); it != overrides.end(); ++it) {
    if (it.key() == "variant") continue;
    const Field* field = nullptr;
    for (const Field& f : fields()) {
      if (f.key == it.key()) field = &f;
    }
    if (field == nullptr) throw ValidationError("unknown override key '" + it.key() + "'");
    field->set(config, it.value());
  }
  config.validate();
}

json config_to_json(const LearnerConfig& config) {
  json out = json::object();
  for (const Field& f : fields()) out[f.key] = f.get(config);
  return out;
}

RunConfigDocument parse_run_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ValidationError("config must be a JSON object");

  RunConfigDocument out;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string& key = it.key();
    const json& v = it.value();
    if (key == "suite") {
      if (!v.is_string()) throw ValidationError("config key 'suite' must be a string");
      out.suite = v.get<std::string>();
    } else if (key == "variant") {
      if (!v.is_string()) throw ValidationError("config key 'variant' must be a string");
      out.variant = v.get<std::string>();
    } else if (key == "seed") {
      if (!v.is_number_unsigned()) {
        throw ValidationError("config key 'seed' must be a non-negative integer");
      }
      out.seeds = {v.get<uint64_t>()};
    } else if (key == "seeds") {
      if (v.is_number_unsigned()) {
        const uint64_t n = v.get<uint64_t>();
        if (n < 1) throw ValidationError("config key 'seeds' must be >= 1");
        for (uint64_t s = 0; s < n; ++s) out.seeds.push_back(s);
      } else if (v.is_array() && !v.empty()) {
        for (const json& s : v) {
          if (!s.is_number_unsigned()) {
            throw ValidationError("config key 'seeds' must list non-negative integers");
          }
          out.seeds.push_back(s.get<uint64_t>());
        }
      } else {
        throw ValidationError("config key 'seeds' must be a count or a non-empty list");
      }
    } else if (key == "overrides") {
      if (!v.is_object()) throw ValidationError("config key 'overrides' must be an object");
      out.overrides = v;
    } else if (key == "out_dir") {
      if (!v.is_string()) throw ValidationError("config key 'out_dir' must be a string");
      out.out_dir = v.get<std::string>();
    } else {
      throw ValidationError("unknown config key '" + key + "'");
    }
  }
  if (doc.contains("seed") && doc.contains("seeds")) {
    throw ValidationError("config keys 'seed' and 'seeds' are mutually exclusive");
  }
  if (out.variant.empty()) throw ValidationError("config key 'variant' is required");
  if (out.seeds.empty()) out.seeds = {0};
  return out;
}

RunConfigDocument load_run_config(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw ValidationError("config not found: " + path);
  }
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

}  // namespace churn_lab
