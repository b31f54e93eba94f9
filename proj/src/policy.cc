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

#include "churn_lab/policy.h"

#include <cmath>

#include "churn_lab/errors.h"

namespace churn_lab {

Policy::Policy(Eigen::MatrixXd probabilities) : probs_(std::move(probabilities)) {
  for (Eigen::Index s = 0; s < probs_.rows(); ++s) {
    double total = 0.0;
    for (Eigen::Index a = 0; a < probs_.cols(); ++a) {
      const double p = probs_(s, a);
      if (!(p >= 0.0 && p <= 1.0)) {
        throw ValidationError("policy probability outside [0, 1] at state " +
                              std::to_string(s));
      }
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw ValidationError("policy row " + std::to_string(s) +
                            " does not sum to 1");
    }
  }
}

Policy Policy::uniform(int num_states, int num_actions) {
  return Policy(Eigen::MatrixXd::Constant(num_states, num_actions,
                                          1.0 / num_actions));
}

Policy Policy::deterministic(std::span<const int> actions, int num_actions) {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(actions.size()),
                                            num_actions);
  for (size_t s = 0; s < actions.size(); ++s) {
    if (actions[s] < 0 || actions[s] >= num_actions) {
      throw ValidationError("action index out of range");
    }
    p(static_cast<Eigen::Index>(s), actions[s]) = 1.0;
  }
  return Policy(std::move(p));
}

Policy Policy::epsilon_greedy(std::span<const int> actions, int num_actions,
                              double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw ValidationError("epsilon must lie in [0, 1]");
  }
  Eigen::MatrixXd p = Eigen::MatrixXd::Constant(
      static_cast<Eigen::Index>(actions.size()), num_actions, epsilon / num_actions);
  for (size_t s = 0; s < actions.size(); ++s) {
    p(static_cast<Eigen::Index>(s), actions[s]) += 1.0 - epsilon;
  }
  return Policy(std::move(p));
}

bool Policy::is_deterministic(int state) const {
  return probs_.row(state).maxCoeff() == 1.0;
}

int Policy::mode(int state) const {
  int best = 0;
  for (int a = 1; a < num_actions(); ++a) {
    if (probs_(state, a) > probs_(state, best)) best = a;
  }
  return best;
}

}  // namespace churn_lab
