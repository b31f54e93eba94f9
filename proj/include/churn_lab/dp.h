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

#ifndef CHURN_LAB_DP_H_
#define CHURN_LAB_DP_H_

#include <iosfwd>
#include <vector>

#include "churn_lab/mdp.h"
#include "churn_lab/metrics.h"
#include "churn_lab/policy.h"

namespace churn_lab {

// Greedy operator g(q). Values within `tie_tolerance` of the row maximum
// count as tied; 0 means exact equality.
Policy greedy(const QTable& q, TieMode mode, double tie_tolerance = 0.0);
// First-index argmax of each row.
std::vector<int> greedy_actions(const QTable& q);

// T_pi q (s, a) = r(s, a) + gamma * E_{s' ~ p, a' ~ pi} q(s', a').
QTable bellman_policy_backup(const TabularMdp& mdp, const QTable& q,
                             const Policy& pi);
// T q (s, a) = r(s, a) + gamma * E_{s'} max_a' q(s', a').
QTable bellman_optimality_backup(const TabularMdp& mdp, const QTable& q);

// q_pi from the linear fixed point of T_pi. Terminal states are pinned to 0;
// throws SingularSystemError when the system has no unique solution.
QTable exact_policy_evaluation(const TabularMdp& mdp, const Policy& pi);

// Expected return from the initial distribution.
double policy_return(const TabularMdp& mdp, const Policy& pi);

enum class ConvergenceCriterion {
  // P is the sweep whose sup-norm update first drops below tolerance.
  kSupNorm,
  // P is the first sweep whose greedy policy attains the optimal return.
  kOptimalPolicy,
};

struct DpIterate {
  int index = 0;             // k; iterate 0 is the initial table/policy
  double churn = 0.0;        // aggregate W(pi_{k-1}, pi_k); 0 for k = 0
  double sup_norm_delta = 0.0;
  double greedy_return = 0.0;
};

struct DpTrace {
  std::vector<DpIterate> iterates;
  std::vector<Policy> policies;  // greedy policy per iterate
  std::vector<QTable> q_tables;  // filled only when requested
  QTable final_q;
  int convergence_step = 0;      // P

  // W_{0:P}.
  double cumulative_churn() const;
  // Rows: iterate,churn,sup_norm_delta,greedy_return.
  void write_csv(std::ostream& os) const;
};

struct ValueIterationOptions {
  double tolerance = 1e-10;
  TieMode tie_mode = TieMode::kShare;
  ConvergenceCriterion criterion = ConvergenceCriterion::kSupNorm;
  int max_sweeps = 100000;
  // Fixed-point sweeps appended after convergence (zero churn), so W+ can be
  // read off the same trace.
  int extra_sweeps = 0;
  bool keep_q_tables = false;
};

// Iterates the optimality backup from q = 0, recording the greedy policy and
// its churn under uniform weighting of reachable states. Throws
// ConvergenceError naming the cap when max_sweeps is exceeded.
DpTrace value_iteration(const TabularMdp& mdp,
                        const ValueIterationOptions& options = {});

struct PolicyIterationOptions {
  TieMode tie_mode = TieMode::kShare;
  // Ties between exactly evaluated values are only equal up to round-off.
  double tie_tolerance = 1e-9;
  int max_iterations = 1000;
};

// Exact evaluation + greedy improvement from the uniform-random policy until
// the greedy policy is stable. P counts improvement steps, including the one
// that confirms stability.
DpTrace policy_iteration(const TabularMdp& mdp,
                         const PolicyIterationOptions& options = {});

struct EvaluationChurnStep {
  int k = 0;
  int greedy_action = 0;  // pi_k(state) = g(T_{pi'}^k q_pi)(state)
  double churn = 0.0;     // W(pi_k, pi_{k+1} | state)
};

// Starting from q_pi, applies T_{pi'} repeatedly and tracks the first-index
// greedy policy at `state` for k = 1..steps.
std::vector<EvaluationChurnStep> evaluation_churn_demo(const TabularMdp& mdp,
                                                       const Policy& pi,
                                                       const Policy& pi_prime,
                                                       int steps, int state);

// Change incurred by a single jump from pi_0 to pi_star; at most 1.
double oracle_change(const Policy& pi_0, const Policy& pi_star,
                     const StateWeighting& mu);

}  // namespace churn_lab

#endif  // CHURN_LAB_DP_H_
