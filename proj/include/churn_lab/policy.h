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

#ifndef CHURN_LAB_POLICY_H_
#define CHURN_LAB_POLICY_H_

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace churn_lab {

// How exactly-tied maximisers are handled when forming a greedy policy.
enum class TieMode {
  kShare,       // every tied argmax action gets equal mass
  kFirstIndex,  // lowest-index maximiser, probability 1
};

// Per-state action distribution pi(a|s), stored as a row-stochastic
// num_states x num_actions matrix.
class Policy {
 public:
  Policy() = default;
  // Throws ValidationError unless every row is a probability vector.
  explicit Policy(Eigen::MatrixXd probabilities);

  static Policy uniform(int num_states, int num_actions);
  static Policy deterministic(std::span<const int> actions, int num_actions);
  // Mixes a deterministic choice with uniform noise of total mass epsilon.
  static Policy epsilon_greedy(std::span<const int> actions, int num_actions,
                               double epsilon);

  int num_states() const { return static_cast<int>(probs_.rows()); }
  int num_actions() const { return static_cast<int>(probs_.cols()); }
  double prob(int state, int action) const { return probs_(state, action); }
  const Eigen::MatrixXd& probabilities() const { return probs_; }

  bool is_deterministic(int state) const;
  // Lowest-index action with the largest probability in `state`.
  int mode(int state) const;

  bool operator==(const Policy& other) const { return probs_ == other.probs_; }

 private:
  Eigen::MatrixXd probs_;
};

}  // namespace churn_lab

#endif  // CHURN_LAB_POLICY_H_
