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

#include "churn_lab/dp.h"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include "churn_lab/csv.h"
#include "churn_lab/errors.h"

namespace churn_lab {
namespace {

void check_shape(const TabularMdp& mdp, const QTable& q) {
  if (q.rows() != mdp.num_states() || q.cols() != mdp.num_actions()) {
    throw ValidationError("Q-table shape does not match the MDP");
  }
}

void check_shape(const TabularMdp& mdp, const Policy& pi) {
  if (pi.num_states() != mdp.num_states() ||
      pi.num_actions() != mdp.num_actions()) {
    throw ValidationError("policy shape does not match the MDP");
  }
}

// Expected next-state continuation sum_{s'} p(s'|s,a) v(s').
double expect(const TabularMdp& mdp, int s, int a, const Eigen::VectorXd& v) {
  double acc = 0.0;
  for (const Outcome& o : mdp.successors(s, a)) acc += o.probability * v[o.next_state];
  return acc;
}

QTable backup_with_values(const TabularMdp& mdp, const Eigen::VectorXd& v) {
  QTable out(mdp.num_states(), mdp.num_actions());
  const double gamma = mdp.discount();
  for (int s = 0; s < mdp.num_states(); ++s) {
    for (int a = 0; a < mdp.num_actions(); ++a) {
      out(s, a) = mdp.reward(s, a) + gamma * expect(mdp, s, a, v);
    }
  }
  return out;
}

double optimal_start_value(const TabularMdp& mdp, const QTable& q_star) {
  double total = 0.0;
  for (int s = 0; s < mdp.num_states(); ++s) {
    const double p = mdp.initial_distribution()[s];
    if (p > 0.0) total += p * q_star.row(s).maxCoeff();
  }
  return total;
}

}  // namespace

Policy greedy(const QTable& q, TieMode mode, double tie_tolerance) {
  if (!q.allFinite()) throw ValidationError("greedy: Q-values must be finite");
  Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(q.rows(), q.cols());
  for (Eigen::Index s = 0; s < q.rows(); ++s) {
    const double best = q.row(s).maxCoeff();
    if (mode == TieMode::kFirstIndex) {
      for (Eigen::Index a = 0; a < q.cols(); ++a) {
        if (q(s, a) >= best - tie_tolerance) {
          probs(s, a) = 1.0;
          break;
        }
      }
      continue;
    }
    int tied = 0;
    for (Eigen::Index a = 0; a < q.cols(); ++a) {
      if (q(s, a) >= best - tie_tolerance) ++tied;
    }
    const double share = 1.0 / tied;
    for (Eigen::Index a = 0; a < q.cols(); ++a) {
      if (q(s, a) >= best - tie_tolerance) probs(s, a) = share;
    }
  }
  return Policy(std::move(probs));
}

std::vector<int> greedy_actions(const QTable& q) {
  std::vector<int> out(q.rows());
  for (Eigen::Index s = 0; s < q.rows(); ++s) {
    Eigen::Index best = 0;
    for (Eigen::Index a = 1; a < q.cols(); ++a) {
      if (q(s, a) > q(s, best)) best = a;
    }
    out[s] = static_cast<int>(best);
  }
  return out;
}

QTable bellman_policy_backup(const TabularMdp& mdp, const QTable& q,
                             const Policy& pi) {
  check_shape(mdp, q);
  check_shape(mdp, pi);
  const Eigen::VectorXd v = (q.array() * pi.probabilities().array()).rowwise().sum();
  return backup_with_values(mdp, v);
}

QTable bellman_optimality_backup(const TabularMdp& mdp, const QTable& q) {
  check_shape(mdp, q);
  const Eigen::VectorXd v = q.rowwise().maxCoeff();
  return backup_with_values(mdp, v);
}

QTable exact_policy_evaluation(const TabularMdp& mdp, const Policy& pi) {
  check_shape(mdp, pi);
  const int n = mdp.num_states();
  const double gamma = mdp.discount();
  std::vector<int> slot(n, -1);
  std::vector<int> live;
  for (int s = 0; s < n; ++s) {
    if (!mdp.is_terminal(s)) {
      slot[s] = static_cast<int>(live.size());
      live.push_back(s);
    }
  }
  const int m = static_cast<int>(live.size());
  Eigen::MatrixXd system = Eigen::MatrixXd::Identity(m, m);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
  for (int i = 0; i < m; ++i) {
    const int s = live[i];
    for (int a = 0; a < mdp.num_actions(); ++a) {
      const double p_a = pi.prob(s, a);
      if (p_a == 0.0) continue;
      rhs[i] += p_a * mdp.reward(s, a);
      for (const Outcome& o : mdp.successors(s, a)) {
        const int j = slot[o.next_state];
        if (j >= 0) system(i, j) -= gamma * p_a * o.probability;
      }
    }
  }
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  if (m > 0) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(system);
    if (!lu.isInvertible()) {
      throw SingularSystemError(
          "policy evaluation: (I - gamma P_pi) is singular; the policy does "
          "not terminate almost surely");
    }
    const Eigen::VectorXd solution = lu.solve(rhs);
    if (!solution.allFinite() ||
        (system * solution - rhs).lpNorm<Eigen::Infinity>() >
            1e-8 * (1.0 + rhs.lpNorm<Eigen::Infinity>())) {
      throw SingularSystemError("policy evaluation: ill-conditioned system");
    }
    for (int i = 0; i < m; ++i) v[live[i]] = solution[i];
  }
  return backup_with_values(mdp, v);
}

double policy_return(const TabularMdp& mdp, const Policy& pi) {
  const QTable q = exact_policy_evaluation(mdp, pi);
  double total = 0.0;
  for (int s = 0; s < mdp.num_states(); ++s) {
    const double p = mdp.initial_distribution()[s];
    if (p == 0.0) continue;
    double v = 0.0;
    for (int a = 0; a < mdp.num_actions(); ++a) v += pi.prob(s, a) * q(s, a);
    total += p * v;
  }
  return total;
}

double DpTrace::cumulative_churn() const {
  double total = 0.0;
  for (const DpIterate& it : iterates) {
    if (it.index >= 1 && it.index <= convergence_step) total += it.churn;
  }
  return total;
}

void DpTrace::write_csv(std::ostream& os) const {
  os << schema_line("dp_trace") << '\n';
  os << "iterate,churn,sup_norm_delta,greedy_return\n";
  for (const DpIterate& it : iterates) {
    os << it.index << ',' << format_double(it.churn) << ','
       << format_double(it.sup_norm_delta) << ','
       << format_double(it.greedy_return) << '\n';
  }
}

DpTrace value_iteration(const TabularMdp& mdp,
                        const ValueIterationOptions& options) {
  if (!(options.tolerance > 0.0) && !mdp.is_episodic_dag()) {
    throw ValidationError("value iteration needs a positive tolerance");
  }
  const std::vector<int> reach = reachable_states(mdp);
  const StateWeighting mu = StateWeighting::uniform(reach, mdp.num_states());

  DpTrace trace;
  QTable q = QTable::Zero(mdp.num_states(), mdp.num_actions());
  Policy pi = greedy(q, options.tie_mode);
  trace.iterates.push_back({0, 0.0, 0.0, policy_return(mdp, pi)});
  trace.policies.push_back(pi);
  if (options.keep_q_tables) trace.q_tables.push_back(q);

  int converged_at = -1;
  auto sweep = [&](int k) {
    QTable next = bellman_optimality_backup(mdp, q);
    const double delta = (next - q).lpNorm<Eigen::Infinity>();
    Policy next_pi = greedy(next, options.tie_mode);
    const double churn = aggregate_change(pi, next_pi, mu);
    trace.iterates.push_back({k, churn, delta, policy_return(mdp, next_pi)});
    trace.policies.push_back(next_pi);
    if (options.keep_q_tables) trace.q_tables.push_back(next);
    q = std::move(next);
    pi = std::move(next_pi);
    return delta;
  };

  for (int k = 1; k <= options.max_sweeps; ++k) {
    if (sweep(k) < options.tolerance) {
      converged_at = k;
      break;
    }
  }
  if (converged_at < 0) {
    throw ConvergenceError("value iteration did not converge within max_sweeps=" +
                           std::to_string(options.max_sweeps));
  }
  for (int e = 1; e <= options.extra_sweeps; ++e) sweep(converged_at + e);

  trace.final_q = q;
  if (options.criterion == ConvergenceCriterion::kSupNorm) {
    trace.convergence_step = converged_at;
  } else {
    const double best = optimal_start_value(mdp, q);
    const double slack = 1e-9 * (1.0 + std::abs(best));
    trace.convergence_step = converged_at;
    for (const DpIterate& it : trace.iterates) {
      if (it.index >= 1 && it.greedy_return >= best - slack) {
        trace.convergence_step = it.index;
        break;
      }
    }
  }
  return trace;
}

DpTrace policy_iteration(const TabularMdp& mdp,
                         const PolicyIterationOptions& options) {
  const std::vector<int> reach = reachable_states(mdp);
  const StateWeighting mu = StateWeighting::uniform(reach, mdp.num_states());

  DpTrace trace;
  Policy pi = Policy::uniform(mdp.num_states(), mdp.num_actions());
  QTable previous_q = QTable::Zero(mdp.num_states(), mdp.num_actions());
  trace.iterates.push_back({0, 0.0, 0.0, policy_return(mdp, pi)});
  trace.policies.push_back(pi);

  for (int k = 1; k <= options.max_iterations; ++k) {
    const QTable q = exact_policy_evaluation(mdp, pi);
    Policy next = greedy(q, options.tie_mode, options.tie_tolerance);
    const double churn = aggregate_change(pi, next, mu);
    const double delta = (q - previous_q).lpNorm<Eigen::Infinity>();
    trace.iterates.push_back({k, churn, delta, policy_return(mdp, next)});
    trace.policies.push_back(next);
    const bool stable = next == pi;
    previous_q = q;
    pi = std::move(next);
    if (stable) {
      trace.convergence_step = k;
      trace.final_q = q;
      return trace;
    }
  }
  throw ConvergenceError("policy iteration did not stabilise within max_iterations=" +
                         std::to_string(options.max_iterations));
}

std::vector<EvaluationChurnStep> evaluation_churn_demo(const TabularMdp& mdp,
                                                       const Policy& pi,
                                                       const Policy& pi_prime,
                                                       int steps, int state) {
  if (steps < 1) throw ValidationError("evaluation_churn_demo needs steps >= 1");
  if (state < 0 || state >= mdp.num_states()) {
    throw ValidationError("evaluation_churn_demo: state out of range");
  }
  QTable q = exact_policy_evaluation(mdp, pi);
  std::vector<Policy> greedies;
  greedies.reserve(steps + 1);
  for (int k = 1; k <= steps + 1; ++k) {
    q = bellman_policy_backup(mdp, q, pi_prime);
    greedies.push_back(greedy(q, TieMode::kFirstIndex));
  }
  std::vector<EvaluationChurnStep> out;
  for (int k = 1; k <= steps; ++k) {
    const Policy& now = greedies[k - 1];
    const Policy& next = greedies[k];
    out.push_back({k, now.mode(state), per_state_change(now, next, state)});
  }
  return out;
}

double oracle_change(const Policy& pi_0, const Policy& pi_star,
                     const StateWeighting& mu) {
  return aggregate_change(pi_0, pi_star, mu);
}

}  // namespace churn_lab
