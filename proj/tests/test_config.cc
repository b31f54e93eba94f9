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

#include <fstream>

#include "doctest.h"

#include "churn_lab/config.h"
#include "churn_lab/errors.h"
#include "test_util.h"

namespace churn_lab {
namespace {

using nlohmann::json;

TEST_CASE("Every config field is settable through overrides") {
  LearnerConfig source = LearnerConfig::defaults(Variant::kFrozenLayers);
  source.learning_rate = 2e-3;
  source.learning_rate_end = 2e-4;
  source.anneal_steps = 500;
  source.batch_size = 16;
  source.optimizer = OptimizerKind::kAdam;
  source.optimizer_epsilon = 1e-7;
  source.rmsprop_decay = 0.95;
  source.adam_beta1 = 0.8;
  source.adam_beta2 = 0.99;
  source.exploration_epsilon = 0.2;
  source.hidden_layers = {10, 20};
  source.replay_capacity = 500;
  source.acting_interval = 10;
  source.target_interval = 50;
  source.gap_coefficient = 0.5;
  source.trainable_top_layers = 2;
  source.episode_budget = 123;
  source.convergence_check_interval = 7;
  source.min_post_updates = 11;
  source.post_multiple = 3;
  source.record_switches = true;

  const json doc = config_to_json(source);
  CHECK(doc.size() == override_keys().size());
  for (const std::string& key : override_keys()) CHECK(doc.contains(key));

  LearnerConfig target = LearnerConfig::defaults(Variant::kTabularQl);
  apply_overrides(target, doc);
  CHECK(config_to_json(target) == doc);
}

TEST_CASE("Overrides reject unknown keys and wrong types") {
  LearnerConfig c = LearnerConfig::defaults(Variant::kDqnLike);
  CHECK_THROWS_WITH_AS(apply_overrides(c, json{{"learning_rte", 0.1}}),
                       doctest::Contains("learning_rte"), ValidationError);
  CHECK_THROWS_WITH_AS(apply_overrides(c, json{{"batch_size", "32"}}),
                       doctest::Contains("batch_size"), ValidationError);
  CHECK_THROWS_WITH_AS(apply_overrides(c, json{{"batch_size", 3.5}}),
                       doctest::Contains("batch_size"), ValidationError);
  CHECK_THROWS_WITH_AS(apply_overrides(c, json{{"hidden_layers", 25}}),
                       doctest::Contains("hidden_layers"), ValidationError);
  CHECK_THROWS_WITH_AS(apply_overrides(c, json{{"record_switches", 1}}),
                       doctest::Contains("record_switches"), ValidationError);
  CHECK_THROWS_WITH_AS(apply_overrides(c, json{{"optimizer", "lbfgs"}}),
                       doctest::Contains("lbfgs"), ValidationError);
  // Values are validated after applying.
  CHECK_THROWS_WITH_AS(apply_overrides(c, json{{"exploration_epsilon", 2.0}}),
                       doctest::Contains("exploration_epsilon"), ValidationError);
  CHECK_THROWS_AS(apply_overrides(c, json::array()), ValidationError);

  // The variant is applied before the other keys regardless of order.
  LearnerConfig d = LearnerConfig::defaults(Variant::kDqnLike);
  apply_overrides(d, json{{"learning_rate", 0.05}, {"variant", "tabular-ql"}, {"batch_size", 1}});
  CHECK(d.variant == Variant::kTabularQl);
  CHECK(d.learning_rate == 0.05);
}

TEST_CASE("Run config documents") {
  const RunConfigDocument doc = parse_run_config(R"({
    "suite": "catch-ablations",
    "variant": "ql",
    "seeds": [3, 1],
    "overrides": {"episode_budget": 10},
    "out_dir": "somewhere"
  })");
  CHECK(doc.suite == "catch-ablations");
  CHECK(doc.variant == "ql");
  CHECK(doc.seeds == std::vector<uint64_t>{3, 1});
  CHECK(doc.overrides.at("episode_budget") == 10);
  CHECK(doc.out_dir == "somewhere");

  CHECK(parse_run_config(R"({"variant": "dqn-like"})").seeds == std::vector<uint64_t>{0});
  CHECK(parse_run_config(R"({"variant": "dqn-like", "seeds": 3})").seeds ==
        std::vector<uint64_t>{0, 1, 2});
  CHECK(parse_run_config(R"({"variant": "dqn-like", "seed": 9})").seeds == std::vector<uint64_t>{9});

  CHECK_THROWS_WITH_AS(parse_run_config(R"({"variant": "x", "colour": 1})"),
                       doctest::Contains("colour"), ValidationError);
  CHECK_THROWS_WITH_AS(parse_run_config(R"({"seeds": 2})"), doctest::Contains("variant"),
                       ValidationError);
  CHECK_THROWS_AS(parse_run_config(R"({"variant": "x", "seed": 1, "seeds": 2})"), ValidationError);
  CHECK_THROWS_AS(parse_run_config(R"({"variant": "x", "seeds": 0})"), ValidationError);
  CHECK_THROWS_AS(parse_run_config(R"({"variant": "x", "seeds": [-1]})"), ValidationError);
  CHECK_THROWS_AS(parse_run_config(R"({"variant": 3})"), ValidationError);
  CHECK_THROWS_AS(parse_run_config("[1, 2]"), ValidationError);
  CHECK_THROWS_WITH_AS(parse_run_config("{not json"), doctest::Contains("not valid JSON"),
                       ValidationError);
}

TEST_CASE("Loading config files") {
  CHECK_THROWS_WITH_AS(load_run_config("/nonexistent/missing.json"),
                       doctest::Contains("config not found"), ValidationError);
  const auto dir = testing::scratch_dir("config");
  std::ofstream(dir / "ok.json") << R"({"variant": "mlp-ql-1layer", "seeds": 2})";
  const RunConfigDocument doc = load_run_config((dir / "ok.json").string());
  CHECK(doc.variant == "mlp-ql-1layer");
  CHECK(doc.seeds.size() == 2);
}

}  // namespace
}  // namespace churn_lab
