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

// Policy-change measurements: per-state total variation, weighted aggregate
// change, cumulative / post-convergence change over a trace, action gaps,
// argmax-switch confusion counts and policy null-space diameters.

#ifndef CHURN_LAB_METRICS_H_
#define CHURN_LAB_METRICS_H_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "churn_lab/mdp.h"
#include "churn_lab/policy.h"

namespace churn_lab {

// Distribution mu over states used to average per-state change.
class StateWeighting {
 public:
  enum class Kind { kUniform, kExplicit, kVisitCounts };

  // Uniform over `states` (typically the reachable set).
  static StateWeighting uniform(std::span<const int> states, int num_states);
  // Arbitrary non-negative weights summing to 1 within 1e-9.
  static StateWeighting explicit_weights(Eigen::VectorXd weights);
  // Normalised empirical visit counts.
  static StateWeighting from_visit_counts(std::span<const double> counts);

  Kind kind() const { return kind_; }
  int num_states() const { return static_cast<int>(weights_.size()); }
  const Eigen::VectorXd& weights() const { return weights_; }
  // States with positive weight, ascending.
  const std::vector<int>& support() const { return support_; }

 private:
  StateWeighting(Kind kind, Eigen::VectorXd weights);

  Kind kind_ = Kind::kUniform;
  Eigen::VectorXd weights_;
  std::vector<int> support_;
};

// W(pi, pi' | s): half the L1 distance between the two action distributions.
double per_state_change(const Policy& pi, const Policy& pi_prime, int state);

// E_{s ~ mu} W(pi, pi' | s).
double aggregate_change(const Policy& pi, const Policy& pi_prime,
                        const StateWeighting& mu);

// Fraction of positions where two deterministic action vectors disagree.
// Both vectors index the same ordered state list under uniform weighting.
double switch_fraction(std::span<const int> before, std::span<const int> after);

// One row per learning update t (t >= 1); `churn` is W(pi_{t-1}, pi_t).
struct ChurnRecord {
  int64_t t = 0;
  double churn = 0.0;
  std::optional<double> churn_at10;   // W(pi_{t-10}, pi_t)
  std::optional<double> churn_at100;  // W(pi_{t-100}, pi_t)
  std::optional<double> mean_gap;
  std::optional<double> eval_return;
};

class ChurnTrace {
 public:
  // Throws ValidationError unless t strictly increases and churn is in [0,1].
  void append(const ChurnRecord& record);

  const std::vector<ChurnRecord>& records() const { return records_; }
  size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  int64_t last_update() const { return records_.empty() ? 0 : records_.back().t; }

  std::optional<int64_t> convergence_step() const { return convergence_step_; }
  void set_convergence_step(int64_t p) { convergence_step_ = p; }

 private:
  std::vector<ChurnRecord> records_;
  std::optional<int64_t> convergence_step_;
};

// W_{0:P}: sum of per-update change for updates 1..P.
double cumulative_change(const ChurnTrace& trace, int64_t p);
// Finite-horizon W+: mean per-update change over updates P+1..P+horizon.
double post_convergence_change(const ChurnTrace& trace, int64_t p,
                               int64_t horizon);
// Aggregate change between two snapshots k updates apart.
double interval_change(const Policy& at_t, const Policy& at_t_plus_k,
                       const StateWeighting& mu);

// Largest minus second-largest value (tied maxima give 0).
double action_gap(std::span<const double> values);
double action_gap(const QTable& q, int state);
double mean_action_gap(const QTable& q, const StateWeighting& mu);

// Counts of (previous argmax -> new argmax) switches between deterministic
// policies.
class SwitchConfusion {
 public:
  explicit SwitchConfusion(int num_actions);

  void record(const Policy& before, const Policy& after,
              std::span<const int> states);
  void record(std::span<const int> before_actions,
              std::span<const int> after_actions);

  int64_t count(int from, int to) const { return counts_(from, to); }
  const Eigen::Matrix<int64_t, Eigen::Dynamic, Eigen::Dynamic>& counts() const {
    return counts_;
  }
  int64_t total_switches() const { return counts_.sum(); }
  int64_t states_compared() const { return states_compared_; }

 private:
  Eigen::Matrix<int64_t, Eigen::Dynamic, Eigen::Dynamic> counts_;
  int64_t states_compared_ = 0;
};

struct NullSpaceBound {
  // Fraction of reachable states with at least two tied actions under q_pi.
  double diameter_lower_bound = 0.0;
  // Per-state set {a : q_pi(s, a) = v_pi(s)} (indexed by state).
  std::vector<std::vector<int>> tie_sets;
};

// Certified lower bound on |N(pi)| under uniform weighting of reachable
// states.
NullSpaceBound null_space_tied_diameter(const TabularMdp& mdp, const Policy& pi,
                                        double tolerance = 1e-9);

// Exact diameter over deterministic policies whose value function matches the
// reference policy's in every state. Refuses (TooLargeError) when
// num_actions^|reachable| exceeds max_policies.
double null_space_diameter_bruteforce(const TabularMdp& mdp,
                                      const Policy& reference,
                                      double tolerance = 1e-9,
                                      int64_t max_policies = 1'000'000);

}  // namespace churn_lab

#endif  // CHURN_LAB_METRICS_H_
