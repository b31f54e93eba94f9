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

#include "churn_lab/metrics.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "churn_lab/dp.h"
#include "churn_lab/errors.h"

namespace churn_lab {

StateWeighting::StateWeighting(Kind kind, Eigen::VectorXd weights)
    : kind_(kind), weights_(std::move(weights)) {
  double total = 0.0;
  for (Eigen::Index s = 0; s < weights_.size(); ++s) {
    if (!(weights_[s] >= 0.0) || !std::isfinite(weights_[s])) {
      throw ValidationError("state weights must be finite and non-negative");
    }
    total += weights_[s];
    if (weights_[s] > 0.0) support_.push_back(static_cast<int>(s));
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ValidationError("state weights must sum to 1");
  }
}

StateWeighting StateWeighting::uniform(std::span<const int> states, int num_states) {
  if (states.empty()) throw ValidationError("uniform weighting over no states");
  Eigen::VectorXd w = Eigen::VectorXd::Zero(num_states);
  for (int s : states) {
    if (s < 0 || s >= num_states) throw ValidationError("state out of range");
    w[s] = 1.0 / static_cast<double>(states.size());
  }
  return StateWeighting(Kind::kUniform, std::move(w));
}

StateWeighting StateWeighting::explicit_weights(Eigen::VectorXd weights) {
  return StateWeighting(Kind::kExplicit, std::move(weights));
}

StateWeighting StateWeighting::from_visit_counts(std::span<const double> counts) {
  double total = 0.0;
  for (double c : counts) total += c;
  if (!(total > 0.0)) throw ValidationError("visit counts are all zero");
  Eigen::VectorXd w(static_cast<Eigen::Index>(counts.size()));
  for (size_t s = 0; s < counts.size(); ++s) w[static_cast<Eigen::Index>(s)] = counts[s] / total;
  return StateWeighting(Kind::kVisitCounts, std::move(w));
}

double per_state_change(const Policy& pi, const Policy& pi_prime, int state) {
  if (pi.num_actions() != pi_prime.num_actions()) {
    throw ValidationError("policies have different action counts");
  }
  double l1 = 0.0;
  for (int a = 0; a < pi.num_actions(); ++a) {
    l1 += std::abs(pi.prob(state, a) - pi_prime.prob(state, a));
  }
  return std::min(1.0, 0.5 * l1);
}

double aggregate_change(const Policy& pi, const Policy& pi_prime,
                        const StateWeighting& mu) {
  if (pi.num_states() != mu.num_states() || pi_prime.num_states() != mu.num_states()) {
    throw ValidationError("state weighting does not match the policies' states");
  }
  double total = 0.0;
  for (int s : mu.support()) total += mu.weights()[s] * per_state_change(pi, pi_prime, s);
  return std::min(1.0, total);
}

double switch_fraction(std::span<const int> before, std::span<const int> after) {
  if (before.size() != after.size() || before.empty()) {
    throw ValidationError("switch_fraction: mismatched action vectors");
  }
  int64_t switches = 0;
  for (size_t i = 0; i < before.size(); ++i) switches += before[i] != after[i];
  return static_cast<double>(switches) / static_cast<double>(before.size());
}

void ChurnTrace::append(const ChurnRecord& record) {
  if (!records_.empty() && record.t <= records_.back().t) {
    throw ValidationError("churn trace: update index must strictly increase");
  }
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(record.churn) || (record.churn_at10 && !in_unit(*record.churn_at10)) ||
      (record.churn_at100 && !in_unit(*record.churn_at100))) {
    throw ValidationError("churn trace: churn values must lie in [0, 1]");
  }
  records_.push_back(record);
}

namespace {

// Index of the record with update index t, or -1.
int64_t find_update(const ChurnTrace& trace, int64_t t) {
  const auto& r = trace.records();
  auto it = std::lower_bound(r.begin(), r.end(), t,
                             [](const ChurnRecord& rec, int64_t v) { return rec.t < v; });
  if (it == r.end() || it->t != t) return -1;
  return it - r.begin();
}

}  // namespace

double cumulative_change(const ChurnTrace& trace, int64_t p) {
  if (p < 0 || p > trace.last_update()) {
    throw ValidationError("cumulative_change: P=" + std::to_string(p) +
                          " lies beyond the trace (last update " +
                          std::to_string(trace.last_update()) + ")");
  }
  double total = 0.0;
  for (const ChurnRecord& r : trace.records()) {
    if (r.t > p) break;
    total += r.churn;
  }
  return total;
}

double post_convergence_change(const ChurnTrace& trace, int64_t p, int64_t horizon) {
  if (horizon < 1) throw ValidationError("post_convergence_change: horizon must be >= 1");
  if (p + horizon > trace.last_update()) {
    throw ValidationError("post_convergence_change: trace ends at update " +
                          std::to_string(trace.last_update()) + ", needs " +
                          std::to_string(p + horizon));
  }
  const int64_t first = find_update(trace, p + 1);
  if (first < 0) throw ValidationError("post_convergence_change: update P+1 missing");
  double total = 0.0;
  int64_t n = 0;
  for (size_t i = static_cast<size_t>(first); i < trace.size(); ++i) {
    const ChurnRecord& r = trace.records()[i];
    if (r.t > p + horizon) break;
    total += r.churn;
    ++n;
  }
  return total / static_cast<double>(n);
}

double interval_change(const Policy& at_t, const Policy& at_t_plus_k,
                       const StateWeighting& mu) {
  return aggregate_change(at_t, at_t_plus_k, mu);
}

double action_gap(std::span<const double> values) {
  if (values.size() < 2) throw ValidationError("action gap needs at least 2 actions");
  double best = -std::numeric_limits<double>::infinity();
  double second = -std::numeric_limits<double>::infinity();
  for (double v : values) {
    if (v > best) {
      second = best;
      best = v;
    } else if (v > second) {
      second = v;
    }
  }
  return best - second;
}

double action_gap(const QTable& q, int state) {
  Eigen::VectorXd row = q.row(state).transpose();
  return action_gap(std::span<const double>(row.data(), static_cast<size_t>(row.size())));
}

double mean_action_gap(const QTable& q, const StateWeighting& mu) {
  if (q.rows() != mu.num_states()) throw ValidationError("weighting/Q-table mismatch");
  double total = 0.0;
  for (int s : mu.support()) total += mu.weights()[s] * action_gap(q, s);
  return total;
}

SwitchConfusion::SwitchConfusion(int num_actions)
    : counts_(Eigen::Matrix<int64_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(num_actions,
                                                                          num_actions)) {}

void SwitchConfusion::record(const Policy& before, const Policy& after,
                             std::span<const int> states) {
  for (int s : states) {
    if (!before.is_deterministic(s) || !after.is_deterministic(s)) {
      throw ValidationError("switch confusion needs deterministic policies");
    }
    const int from = before.mode(s);
    const int to = after.mode(s);
    if (from != to) ++counts_(from, to);
    ++states_compared_;
  }
}

void SwitchConfusion::record(std::span<const int> before_actions,
                             std::span<const int> after_actions) {
  if (before_actions.size() != after_actions.size()) {
    throw ValidationError("switch confusion: mismatched action vectors");
  }
  for (size_t i = 0; i < before_actions.size(); ++i) {
    if (before_actions[i] != after_actions[i]) ++counts_(before_actions[i], after_actions[i]);
  }
  states_compared_ += static_cast<int64_t>(before_actions.size());
}

NullSpaceBound null_space_tied_diameter(const TabularMdp& mdp, const Policy& pi,
                                        double tolerance) {
  const QTable q = exact_policy_evaluation(mdp, pi);
  const std::vector<int> reach = reachable_states(mdp);
  NullSpaceBound out;
  out.tie_sets.resize(mdp.num_states());
  int multi = 0;
  for (int s = 0; s < mdp.num_states(); ++s) {
    double v = 0.0;
    for (int a = 0; a < mdp.num_actions(); ++a) v += pi.prob(s, a) * q(s, a);
    for (int a = 0; a < mdp.num_actions(); ++a) {
      if (std::abs(q(s, a) - v) <= tolerance) out.tie_sets[s].push_back(a);
    }
  }
  for (int s : reach) multi += out.tie_sets[s].size() >= 2;
  out.diameter_lower_bound = static_cast<double>(multi) / static_cast<double>(reach.size());
  return out;
}

double null_space_diameter_bruteforce(const TabularMdp& mdp, const Policy& reference,
                                      double tolerance, int64_t max_policies) {
  const std::vector<int> reach = reachable_states(mdp);
  const int num_actions = mdp.num_actions();
  double count = 1.0;
  for (size_t i = 0; i < reach.size(); ++i) {
    count *= num_actions;
    if (count > static_cast<double>(max_policies)) {
      throw TooLargeError("null-space brute force refused: " +
                          std::to_string(num_actions) + "^" +
                          std::to_string(reach.size()) + " policies exceeds " +
                          std::to_string(max_policies));
    }
  }
  const int64_t total = static_cast<int64_t>(count);

  std::vector<int> base(mdp.num_states());
  for (int s = 0; s < mdp.num_states(); ++s) base[s] = reference.mode(s);
  auto state_values = [&](const std::vector<int>& actions) {
    const Policy p = Policy::deterministic(actions, num_actions);
    const QTable q = exact_policy_evaluation(mdp, p);
    Eigen::VectorXd v(mdp.num_states());
    for (int s = 0; s < mdp.num_states(); ++s) v[s] = q(s, actions[s]);
    return v;
  };
  const Eigen::VectorXd v_ref = state_values(base);

  std::vector<std::vector<int>> group;
  std::vector<int> actions = base;
  for (int64_t code = 0; code < total; ++code) {
    int64_t c = code;
    for (int s : reach) {
      actions[s] = static_cast<int>(c % num_actions);
      c /= num_actions;
    }
    Eigen::VectorXd v;
    try {
      v = state_values(actions);
    } catch (const SingularSystemError&) {
      continue;
    }
    if ((v - v_ref).lpNorm<Eigen::Infinity>() <= tolerance) {
      std::vector<int> restricted;
      restricted.reserve(reach.size());
      for (int s : reach) restricted.push_back(actions[s]);
      group.push_back(std::move(restricted));
    }
  }
  double diameter = 0.0;
  for (size_t i = 0; i < group.size(); ++i) {
    for (size_t j = i + 1; j < group.size(); ++j) {
      diameter = std::max(diameter, switch_fraction(group[i], group[j]));
    }
  }
  return diameter;
}

}  // namespace churn_lab
