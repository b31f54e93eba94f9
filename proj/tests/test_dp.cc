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

#include <cmath>
#include <sstream>

#include "doctest.h"

#include "churn_lab/dp.h"
#include "churn_lab/errors.h"
#include "churn_lab/harness.h"
#include "churn_lab/metrics.h"
#include "test_util.h"

namespace churn_lab {
namespace {

// Dense (S*A) x S transition matrix and S x (S*A) policy matrix.
Eigen::MatrixXd dense_transitions(const TabularMdp& mdp) {
  const int S = mdp.num_states(), A = mdp.num_actions();
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(S * A, S);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      for (int n = 0; n < S; ++n) p(s * A + a, n) = mdp.probability(s, a, n);
    }
  }
  return p;
}

Eigen::MatrixXd dense_policy(const Policy& pi) {
  const int S = pi.num_states(), A = pi.num_actions();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(S, S * A);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) m(s, s * A + a) = pi.prob(s, a);
  }
  return m;
}

Eigen::VectorXd flatten(const QTable& q) {
  Eigen::VectorXd v(q.size());
  for (int s = 0; s < q.rows(); ++s) {
    for (int a = 0; a < q.cols(); ++a) v[s * q.cols() + a] = q(s, a);
  }
  return v;
}

QTable unflatten(const Eigen::VectorXd& v, int S, int A) {
  QTable q(S, A);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) q(s, a) = v[s * A + a];
  }
  return q;
}

TEST_CASE("greedy operator tie modes") {
  QTable q(1, 3);
  q << 1, 1, 0;
  const Policy share = greedy(q, TieMode::kShare);
  CHECK(share.prob(0, 0) == 0.5);
  CHECK(share.prob(0, 1) == 0.5);
  CHECK(share.prob(0, 2) == 0.0);
  const Policy first = greedy(q, TieMode::kFirstIndex);
  CHECK(first.prob(0, 0) == 1.0);
  CHECK(first.prob(0, 1) == 0.0);

  q << 0.2, 0.9, 0.1;
  CHECK(greedy(q, TieMode::kShare).prob(0, 1) == 1.0);
  CHECK(greedy(q, TieMode::kFirstIndex).prob(0, 1) == 1.0);
  CHECK(greedy_actions(q) == std::vector<int>{1});

  q << 1.0, 1.0 - 1e-12, 0.0;
  CHECK(greedy(q, TieMode::kShare).prob(0, 0) == 1.0);
  CHECK(greedy(q, TieMode::kShare, 1e-9).prob(0, 1) == 0.5);

  q(0, 2) = NAN;
  CHECK_THROWS_AS(greedy(q, TieMode::kShare), ValidationError);

  // Rows sum to one and the support is the argmax set.
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    QTable r(4, 3);
    for (int k = 0; k < r.size(); ++k) r.data()[k] = uniform_index(rng, 3);
    const Policy pi = greedy(r, TieMode::kShare);
    for (int s = 0; s < 4; ++s) {
      CHECK(pi.probabilities().row(s).sum() == doctest::Approx(1.0).epsilon(1e-15));
      for (int a = 0; a < 3; ++a) CHECK((pi.prob(s, a) > 0.0) == (r(s, a) == r.row(s).maxCoeff()));
    }
  }
}

TEST_CASE("Bellman backups match a dense matrix product") {
  std::mt19937_64 rng(11);
  const TabularMdp mdp = testing::random_mdp(rng, 3, 2, 0.9);
  const Policy pi = testing::random_policy(rng, 3, 2);
  QTable q(3, 2);
  for (int k = 0; k < q.size(); ++k) q.data()[k] = 2.0 * uniform01(rng) - 1.0;

  const Eigen::MatrixXd P = dense_transitions(mdp);
  const Eigen::VectorXd expected =
      flatten(mdp.rewards()) + 0.9 * P * dense_policy(pi) * flatten(q);
  const QTable got = bellman_policy_backup(mdp, q, pi);
  CHECK((flatten(got) - expected).lpNorm<Eigen::Infinity>() < 1e-12);

  CHECK((bellman_policy_backup(mdp, QTable::Zero(3, 2), pi) - mdp.rewards()).norm() == 0.0);
  CHECK_THROWS_AS(bellman_policy_backup(mdp, QTable::Zero(2, 2), pi), ValidationError);

  const Eigen::VectorXd v = q.rowwise().maxCoeff();
  const Eigen::VectorXd expected_opt = flatten(mdp.rewards()) + 0.9 * P * v;
  CHECK((flatten(bellman_optimality_backup(mdp, q)) - expected_opt).lpNorm<Eigen::Infinity>() <
        1e-12);
}

TEST_CASE("Optimality backup fixed point agrees with policy iteration") {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 10; ++i) {
    const TabularMdp mdp = testing::random_mdp(rng, 3, 2, 0.8);
    const DpTrace pi = policy_iteration(mdp);
    QTable q = QTable::Zero(3, 2);
    for (int k = 0; k < 400; ++k) q = bellman_optimality_backup(mdp, q);
    CHECK((q - pi.final_q).lpNorm<Eigen::Infinity>() < 1e-9);
  }
}

TEST_CASE("Exact policy evaluation matches iterated backups") {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 5; ++i) {
    const TabularMdp mdp = testing::random_mdp(rng, 4, 3, 0.95);
    const Policy pi = testing::random_policy(rng, 4, 3);
    QTable q = QTable::Zero(4, 3);
    for (int k = 0; k < 10000; ++k) q = bellman_policy_backup(mdp, q, pi);
    CHECK((exact_policy_evaluation(mdp, pi) - q).lpNorm<Eigen::Infinity>() < 1e-9);
  }
  // Linear-system oracle: (I - gamma P Pi) q = r.
  const TabularMdp mdp = testing::random_mdp(rng, 5, 2, 0.9);
  const Policy pi = testing::random_policy(rng, 5, 2);
  const Eigen::MatrixXd M =
      Eigen::MatrixXd::Identity(10, 10) - 0.9 * dense_transitions(mdp) * dense_policy(pi);
  const QTable oracle = unflatten(M.fullPivLu().solve(flatten(mdp.rewards())), 5, 2);
  CHECK((exact_policy_evaluation(mdp, pi) - oracle).lpNorm<Eigen::Infinity>() < 1e-12);
}

// Independent sweep loop: plain nested loops, tie-sharing greedy, uniform
// weighting of the reachable states.
double hand_rolled_catch_churn(const Environment& env, int sweeps) {
  const TabularMdp& mdp = env.mdp;
  const std::vector<int> reach = reachable_states(mdp);
  const int S = mdp.num_states(), A = mdp.num_actions();
  std::vector<double> q(S * A, 0.0);
  auto share = [&](const std::vector<double>& t, int s) {
    std::vector<double> p(A, 0.0);
    double best = t[s * A];
    for (int a = 1; a < A; ++a) best = std::max(best, t[s * A + a]);
    int ties = 0;
    for (int a = 0; a < A; ++a) ties += t[s * A + a] == best;
    for (int a = 0; a < A; ++a) p[a] = t[s * A + a] == best ? 1.0 / ties : 0.0;
    return p;
  };
  double total = 0.0;
  for (int k = 1; k <= sweeps; ++k) {
    std::vector<double> next(S * A, 0.0);
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) {
        double cont = 0.0;
        for (const Outcome& o : mdp.successors(s, a)) {
          double m = q[o.next_state * A];
          for (int b = 1; b < A; ++b) m = std::max(m, q[o.next_state * A + b]);
          cont += o.probability * m;
        }
        next[s * A + a] = mdp.reward(s, a) + mdp.discount() * cont;
      }
    }
    double churn = 0.0;
    for (int s : reach) {
      const auto p0 = share(q, s), p1 = share(next, s);
      double tv = 0.0;
      for (int a = 0; a < A; ++a) tv += std::abs(p0[a] - p1[a]);
      churn += 0.5 * tv / reach.size();
    }
    total += churn;
    q = next;
  }
  return total;
}

TEST_CASE("Catch value iteration") {
  const Environment env = build_catch();
  const DpTrace vi = value_iteration(env.mdp);
  CHECK(vi.convergence_step == 10);
  CHECK(vi.cumulative_churn() == doctest::Approx(hand_rolled_catch_churn(env, 10)).epsilon(1e-12));
  CHECK(std::abs(vi.cumulative_churn() - 0.09) <= 0.03);
  // Frozen from the hand-rolled loop above.
  CHECK(vi.cumulative_churn() == doctest::Approx(0.0909090909090909).epsilon(1e-12));

  for (const DpIterate& it : vi.iterates) {
    CHECK(it.churn >= 0.0);
    CHECK(it.churn <= 1.0);
  }
  // Ten optimality backups from zero give an optimal greedy policy.
  QTable q = QTable::Zero(env.mdp.num_states(), 3);
  for (int k = 0; k < 10; ++k) q = bellman_optimality_backup(env.mdp, q);
  CHECK(policy_return(env.mdp, greedy(q, TieMode::kFirstIndex)) == doctest::Approx(1.0));

  ValueIterationOptions policy_level;
  policy_level.criterion = ConvergenceCriterion::kOptimalPolicy;
  const DpTrace vp = value_iteration(env.mdp, policy_level);
  CHECK(vp.convergence_step <= 10);
  CHECK(vp.iterates[vp.convergence_step].greedy_return == doctest::Approx(1.0));
}

TEST_CASE("Value iteration errors and contraction") {
  std::mt19937_64 rng(14);
  const TabularMdp mdp = testing::random_mdp(rng, 6, 3, 0.9);
  ValueIterationOptions capped;
  capped.max_sweeps = 3;
  CHECK_THROWS_WITH_AS(value_iteration(mdp, capped), doctest::Contains("max_sweeps=3"),
                       ConvergenceError);
  ValueIterationOptions zero;
  zero.tolerance = 0.0;
  CHECK_THROWS_AS(value_iteration(mdp, zero), ValidationError);

  const DpTrace vi = value_iteration(mdp);
  for (size_t k = 2; k < vi.iterates.size(); ++k) {
    CHECK(vi.iterates[k].sup_norm_delta <= 0.9 * vi.iterates[k - 1].sup_norm_delta + 1e-12);
  }
}

TEST_CASE("Bandit value iteration settles after one sweep without churn") {
  const TwoArmBandit b = build_two_arm_bandit({0.0, 0.0}, {10.0, 10.0});
  const DpTrace vi = value_iteration(b.mdp);
  CHECK(vi.convergence_step == 2);
  CHECK(vi.cumulative_churn() == 0.0);
}

TEST_CASE("Policy iteration") {
  const Environment rooms = build_four_rooms();
  const DpTrace pi = policy_iteration(rooms.mdp);
  CHECK(pi.convergence_step <= 5);
  CHECK(pi.cumulative_churn() > 1.0);
  const DpTrace vi = value_iteration(rooms.mdp);
  CHECK((vi.final_q - pi.final_q).lpNorm<Eigen::Infinity>() < 1e-8);

  // Every Catch start column is caught by the final greedy policy.
  const Environment catch_env = build_catch();
  const DpTrace cp = policy_iteration(catch_env.mdp);
  const std::vector<int> actions = greedy_actions(cp.final_q);
  for (int s = 0; s < catch_env.mdp.num_states(); ++s) {
    if (catch_env.mdp.initial_distribution()[s] == 0.0) continue;
    int cur = s;
    double ret = 0.0;
    while (!catch_env.mdp.is_terminal(cur)) {
      ret += catch_env.mdp.reward(cur, actions[cur]);
      cur = catch_env.mdp.successors(cur, actions[cur])[0].next_state;
    }
    CHECK(ret == 1.0);
  }

  // Evaluated values never decrease along the improvement sequence.
  std::mt19937_64 rng(15);
  for (int i = 0; i < 20; ++i) {
    const TabularMdp mdp = testing::random_mdp(rng, 5, 3, 0.9);
    const DpTrace trace = policy_iteration(mdp);
    Eigen::VectorXd prev;
    for (const Policy& p : trace.policies) {
      const QTable q = exact_policy_evaluation(mdp, p);
      Eigen::VectorXd v = (q.array() * p.probabilities().array()).rowwise().sum();
      if (prev.size() > 0) CHECK((v - prev).minCoeff() >= -1e-9);
      prev = v;
    }
  }
}

TEST_CASE("Optimal Catch policy evaluates to +1 at every start") {
  const Environment env = build_catch();
  const DpTrace vi = value_iteration(env.mdp);
  const QTable q = exact_policy_evaluation(env.mdp, greedy(vi.final_q, TieMode::kFirstIndex));
  for (int s = 0; s < env.mdp.num_states(); ++s) {
    if (env.mdp.initial_distribution()[s] > 0.0) CHECK(q.row(s).maxCoeff() == doctest::Approx(1.0));
  }
}

// Applies T_{pi'} to q_pi step by step with the dense matrices.
std::vector<int> hand_rolled_chain_choices(const ChainMdp& chain, const Policy& pi,
                                           const Policy& pi_prime, int steps) {
  const TabularMdp& mdp = chain.env.mdp;
  const int S = mdp.num_states(), A = mdp.num_actions();
  const Eigen::MatrixXd P = dense_transitions(mdp);
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(S * A, S * A) - mdp.discount() * P * dense_policy(pi);
  for (int s = 0; s < S; ++s) {
    if (!mdp.is_terminal(s)) continue;
    for (int a = 0; a < A; ++a) {
      M.row(s * A + a).setZero();
      M(s * A + a, s * A + a) = 1.0;
    }
  }
  Eigen::VectorXd q = M.fullPivLu().solve(flatten(mdp.rewards()));
  const Eigen::MatrixXd step = mdp.discount() * P * dense_policy(pi_prime);
  std::vector<int> choices;
  for (int k = 1; k <= steps; ++k) {
    q = flatten(mdp.rewards()) + step * q;
    int best = 0;
    const int s = chain.distinguished_state;
    for (int a = 1; a < A; ++a) {
      if (q[s * A + a] > q[s * A + best]) best = a;
    }
    choices.push_back(best);
  }
  return choices;
}

TEST_CASE("Chain evaluation oscillation") {
  const ChainMdp chain = build_chain_mdp(kChainArmLength);
  const auto [pi, pi_prime] = chain_demo_policies(chain);
  const QTable q_pi = exact_policy_evaluation(chain.env.mdp, pi);
  CHECK(q_pi.row(chain.distinguished_state).maxCoeff() >= 0.0);
  const Eigen::VectorXd v = (q_pi.array() * pi.probabilities().array()).rowwise().sum();
  CHECK(v[chain.distinguished_state] == doctest::Approx(0.0).epsilon(1e-15));
  // Fixed point of T_pi.
  CHECK((bellman_policy_backup(chain.env.mdp, q_pi, pi) - q_pi).lpNorm<Eigen::Infinity>() < 1e-12);

  const auto steps = evaluation_churn_demo(chain.env.mdp, pi, pi_prime, 50, chain.distinguished_state);
  REQUIRE(steps.size() == 50);
  for (int k = 0; k < 50; ++k) {
    CHECK(steps[k].k == k + 1);
    CHECK(steps[k].churn == 1.0);
    CHECK(steps[k].greedy_action == (k % 2 == 0 ? kGreen : kBlue));
  }

  const auto same = evaluation_churn_demo(chain.env.mdp, pi, pi, 10, chain.distinguished_state);
  for (const auto& s : same) CHECK(s.churn == 0.0);

  CHECK_THROWS_AS(evaluation_churn_demo(chain.env.mdp, pi, pi_prime, 0, 0), ValidationError);
}

TEST_CASE("Chain arm length 2 against direct matrix application") {
  const ChainMdp chain = build_chain_mdp(2);
  const auto [pi, pi_prime] = chain_demo_policies(chain);
  const std::vector<int> oracle = hand_rolled_chain_choices(chain, pi, pi_prime, 6);
  const auto steps = evaluation_churn_demo(chain.env.mdp, pi, pi_prime, 6, chain.distinguished_state);
  for (int k = 0; k < 6; ++k) CHECK(steps[k].greedy_action == oracle[k]);
  CHECK(oracle[0] == kGreen);
  CHECK(oracle[1] == kBlue);
}

TEST_CASE("Oracle change") {
  const Environment rooms = build_four_rooms();
  const std::vector<int> reach = reachable_states(rooms.mdp);
  const StateWeighting mu = StateWeighting::uniform(reach, rooms.mdp.num_states());
  const DpTrace vi = value_iteration(rooms.mdp);
  const Policy& star = vi.policies.back();
  CHECK(oracle_change(star, star, mu) == 0.0);
  const double o = oracle_change(Policy::uniform(rooms.mdp.num_states(), 4), star, mu);
  CHECK(o >= 0.0);
  CHECK(o <= 1.0);
  CHECK(o == doctest::Approx(oracle_change(star, Policy::uniform(rooms.mdp.num_states(), 4), mu)));
  CHECK(vi.cumulative_churn() <= oracle_change(vi.policies.front(), star, mu) + 0.2);

  std::vector<int> zeros(rooms.mdp.num_states(), 0), ones(rooms.mdp.num_states(), 1);
  CHECK(oracle_change(Policy::deterministic(zeros, 4), Policy::deterministic(ones, 4), mu) == 1.0);
}

TEST_CASE("DP trace CSV export") {
  const DpTrace vi = value_iteration(build_catch().mdp);
  std::ostringstream os;
  vi.write_csv(os);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "# schema: dp_trace v1");
  std::getline(is, line);
  CHECK(line == "iterate,churn,sup_norm_delta,greedy_return");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == static_cast<int>(vi.iterates.size()));
}

}  // namespace
}  // namespace churn_lab
