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

#ifndef CHURN_LAB_MDP_H_
#define CHURN_LAB_MDP_H_

#include <array>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace churn_lab {

// Action values indexed [state][action].
using QTable = Eigen::MatrixXd;

struct Outcome {
  int next_state;
  double probability;
};

// Explicit finite MDP. Transitions are stored sparsely per (state, action);
// the model is validated on construction and immutable afterwards.
class TabularMdp {
 public:
  struct Data {
    int num_states = 0;
    int num_actions = 0;
    double discount = 0.0;
    // Indexed [state * num_actions + action].
    std::vector<std::vector<Outcome>> transitions;
    // num_states x num_actions expected rewards.
    Eigen::MatrixXd reward;
    std::vector<double> initial_distribution;
    std::vector<bool> terminal;
  };

  // Throws ConstructionError when any invariant is violated.
  explicit TabularMdp(Data data);

  int num_states() const { return data_.num_states; }
  int num_actions() const { return data_.num_actions; }
  double discount() const { return data_.discount; }

  std::span<const Outcome> successors(int state, int action) const {
    return data_.transitions[static_cast<size_t>(state) * data_.num_actions +
                             action];
  }
  double probability(int state, int action, int next_state) const;
  double reward(int state, int action) const { return data_.reward(state, action); }
  const Eigen::MatrixXd& rewards() const { return data_.reward; }
  const std::vector<double>& initial_distribution() const {
    return data_.initial_distribution;
  }
  bool is_terminal(int state) const { return data_.terminal[state]; }

  // True when every (state, action) has a single successor.
  bool is_deterministic() const { return deterministic_; }
  // True when the non-terminal transition graph has no cycles.
  bool is_episodic_dag() const { return episodic_dag_; }

  // Plain-text dump: one line per (s, a) with num_states next-state
  // probabilities followed by the reward.
  void write_matrix_dump(std::ostream& os) const;

  // Samples a successor of (state, action).
  template <typename Rng>
  int sample_next(int state, int action, Rng& rng) const;

 private:
  Data data_;
  bool deterministic_ = true;
  bool episodic_dag_ = false;
};

// Maps state indices to real feature vectors; column s of `features` is the
// observation of state s.
class ObservationCodec {
 public:
  ObservationCodec() = default;
  explicit ObservationCodec(Eigen::MatrixXd features);

  int feature_dimension() const { return static_cast<int>(features_.rows()); }
  int num_states() const { return static_cast<int>(features_.cols()); }
  Eigen::VectorXd encode(int state) const { return features_.col(state); }
  const Eigen::MatrixXd& features() const { return features_; }

  // Observation matrix for a list of states, one column per state.
  Eigen::MatrixXd encode_all(std::span<const int> states) const;

 private:
  Eigen::MatrixXd features_;
};

// Named per-state coordinates, e.g. {ball_x, ball_y, paddle_x} for Catch.
struct StateAnnotation {
  std::vector<std::string> axes;
  std::vector<std::vector<int>> coordinates;  // [state][axis]
};

struct Environment {
  std::string name;
  TabularMdp mdp;
  ObservationCodec codec;
  StateAnnotation annotation;
};

enum CatchAction : int { kCatchLeft = 0, kCatchStay = 1, kCatchRight = 2 };

// rows >= 2, cols >= 1 and odd. Ball starts uniformly on the top row with the
// paddle centred; reward +1/-1 on the step that lands the ball on the bottom
// row. Discount 1.
Environment build_catch(int rows = 10, int cols = 5);
int catch_state_index(int rows, int cols, int ball_x, int ball_y, int paddle_x);

enum GridAction : int { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };

// size x size grid split into four rooms by one horizontal and one vertical
// wall, each wall segment pierced by a doorway at its midpoint. Start in the
// top-left corner, absorbing goal in the bottom-right corner with reward 1 on
// entry.
Environment build_four_rooms(int size = 16, double discount = 0.97);

// Single state, two arms. Each pull is a one-step episode (discount 0) paying
// q_target[arm]; q_init is the recommended learner initialisation.
struct TwoArmBandit {
  TabularMdp mdp;
  std::array<double, 2> q_init;
};
TwoArmBandit build_two_arm_bandit(std::array<double, 2> q_init,
                                  std::array<double, 2> q_target);

// Actions of the chain MDP. The first-index tie rule therefore prefers green
// over blue over red.
enum ChainAction : int { kGreen = 0, kBlue = 1, kRed = 2 };

struct ChainMdp {
  Environment env;
  int distinguished_state;
};
ChainMdp build_chain_mdp(int arm_length, double discount = 0.9);

enum DeepSeaAction : int { kDeepSeaLeft = 0, kDeepSeaRight = 1 };

// depth x depth lower-triangular grid, one-hot observations; each right move
// costs 0.01 / depth and only the all-right path earns +1. Discount 1.
Environment build_deep_sea(int depth);

// States reachable with positive probability from the initial distribution
// under some policy, sorted ascending.
std::vector<int> reachable_states(const TabularMdp& mdp);

// Deterministic helpers for seeded randomness. They avoid the
// implementation-defined std distributions so results are reproducible.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}
inline int uniform_index(std::mt19937_64& rng, int n) {
  return static_cast<int>((static_cast<unsigned __int128>(rng()) * n) >> 64);
}

template <typename Rng>
int TabularMdp::sample_next(int state, int action, Rng& rng) const {
  auto outs = successors(state, action);
  if (outs.size() == 1) return outs[0].next_state;
  double u = uniform01(rng);
  double acc = 0.0;
  for (const Outcome& o : outs) {
    acc += o.probability;
    if (u < acc) return o.next_state;
  }
  return outs.back().next_state;
}

// Samples an index from a probability vector.
int sample_categorical(std::span<const double> probs, std::mt19937_64& rng);

}  // namespace churn_lab

#endif  // CHURN_LAB_MDP_H_
