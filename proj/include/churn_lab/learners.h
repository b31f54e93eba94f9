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

// Incremental learners on tabular MDPs: tabular and neural Q-learning,
// supervised regression / cloning baselines, replay-based DQN-like learning
// and its ablations. Every learner records the churn of its greedy policy
// after each update.

#ifndef CHURN_LAB_LEARNERS_H_
#define CHURN_LAB_LEARNERS_H_

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "churn_lab/mdp.h"
#include "churn_lab/metrics.h"
#include "churn_lab/mlp.h"

namespace churn_lab {

struct Transition {
  int state = 0;
  int action = 0;
  double reward = 0.0;
  int next_state = 0;
  bool terminal = false;
  // Discounted return-to-go from (state, action), filled once the episode ends.
  std::optional<double> mc_return;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity = 1000);

  void add(const Transition& t);
  int size() const { return static_cast<int>(items_.size()); }
  int capacity() const { return capacity_; }
  const Transition& at(int i) const { return items_[i]; }
  // Uniform with replacement; requires size() >= batch_size.
  std::vector<int> sample(int batch_size, std::mt19937_64& rng) const;

 private:
  int capacity_;
  int cursor_ = 0;
  std::vector<Transition> items_;
};

enum class Variant {
  kTabularQl,
  kMlpQl1,
  kMlpQl3,
  kRegressQstar,
  kClonePistar,
  kDqnLike,
  kAdvantageLearning,
  kMcTarget,
  kStationaryData,
  kFrozenLayers,
};

std::string variant_name(Variant v);
// Accepts the names produced by variant_name; throws ValidationError otherwise.
Variant parse_variant(const std::string& name);
bool uses_replay(Variant v);
bool uses_network(Variant v);

std::string optimizer_name(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& name);

struct LearnerConfig {
  Variant variant = Variant::kDqnLike;
  double learning_rate = 1e-3;
  // Log-linear anneal to learning_rate_end over anneal_steps updates when > 0.
  double learning_rate_end = 1e-3;
  int64_t anneal_steps = 0;
  int batch_size = 32;
  OptimizerKind optimizer = OptimizerKind::kRmsProp;
  double optimizer_epsilon = 1e-5;
  double rmsprop_decay = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double exploration_epsilon = 0.1;
  std::vector<int> hidden_layers = {25, 25, 25};
  int replay_capacity = 1000;
  // Updates between copies of the online network into the acting network.
  int64_t acting_interval = 1;
  // Updates between target-network refreshes; 0 bootstraps from the online net.
  int64_t target_interval = 0;
  double gap_coefficient = 0.9;
  int trainable_top_layers = 1;
  int64_t episode_budget = 5000;
  int64_t convergence_check_interval = 100;
  int64_t min_post_updates = 1000;
  int64_t post_multiple = 1;
  bool record_switches = false;

  // Throws ValidationError naming the offending field.
  void validate() const;
  // Table defaults for a variant (learning rate, batch, optimizer, network).
  static LearnerConfig defaults(Variant v);
};

// q(s,a) += alpha (r + gamma (1 - terminal) max_a' q(s',a') - q(s,a))
void tabular_q_step(QTable& q, const Transition& t, double alpha, double discount);

enum class TargetMode { kQl, kAl, kMc, kQstar };

struct TargetSpec {
  TargetMode mode = TargetMode::kQl;
  double gap_coefficient = 0.0;
  const QTable* qstar = nullptr;
};

// q_reference rows are indexed by state.
double compute_target(const Transition& t, double discount, const QTable& q_reference,
                      const TargetSpec& spec);

// Epsilon-greedy with first-index tie breaking.
int act(std::span<const double> q_values, double epsilon, std::mt19937_64& rng);

// Exact test of a deterministic policy against the optimal value of every
// start state. Equivalent to evaluation episodes under deterministic dynamics.
class ConvergenceTest {
 public:
  explicit ConvergenceTest(const TabularMdp& mdp, double tolerance = 1e-9);

  bool converged(std::span<const int> greedy_actions) const;
  // Start-distribution-weighted return of the policy; nullopt if it never terminates.
  std::optional<double> expected_return(std::span<const int> greedy_actions) const;
  const std::vector<int>& start_states() const { return starts_; }

 private:
  std::optional<Eigen::VectorXd> state_values(std::span<const int> greedy_actions) const;

  const TabularMdp* mdp_;
  double tolerance_;
  std::vector<int> starts_;
  Eigen::VectorXd optimal_values_;
};

bool detect_convergence(const TabularMdp& mdp, std::span<const int> greedy_actions);

struct SwitchEvent {
  int64_t t;
  int state;
};

struct RunResult {
  ChurnTrace trace;
  bool converged = false;
  std::optional<int64_t> convergence_step;
  int64_t post_updates = 0;
  int64_t episodes = 0;
  int64_t updates = 0;
  std::vector<SwitchEvent> switches;
  std::optional<MlpParams> params;
  std::optional<QTable> table;
};

// Seeds derived from the seed index alone, so runs of different configurations
// with the same index share their initial parameters and environment stream.
uint64_t derive_seed(uint64_t seed, uint64_t stream);

RunResult train_variant(const Environment& env, const LearnerConfig& config, uint64_t seed);

}  // namespace churn_lab

#endif  // CHURN_LAB_LEARNERS_H_
