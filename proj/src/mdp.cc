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

#include "churn_lab/mdp.h"

#include <algorithm>
#include <cmath>
#include <deque>
#include <ostream>
#include <string>

#include "churn_lab/errors.h"

namespace churn_lab {
namespace {

constexpr double kRowSumTolerance = 1e-12;

void require(bool ok, const std::string& what) {
  if (!ok) throw ConstructionError(what);
}

// Kahn's algorithm over non-terminal states; self-loops count as cycles.
bool non_terminal_graph_is_acyclic(const TabularMdp& mdp) {
  const int n = mdp.num_states();
  std::vector<int> in_degree(n, 0);
  std::vector<std::vector<int>> edges(n);
  for (int s = 0; s < n; ++s) {
    if (mdp.is_terminal(s)) continue;
    for (int a = 0; a < mdp.num_actions(); ++a) {
      for (const Outcome& o : mdp.successors(s, a)) {
        if (o.probability <= 0.0 || mdp.is_terminal(o.next_state)) continue;
        edges[s].push_back(o.next_state);
        ++in_degree[o.next_state];
      }
    }
  }
  std::deque<int> ready;
  int live = 0;
  for (int s = 0; s < n; ++s) {
    if (mdp.is_terminal(s)) continue;
    ++live;
    if (in_degree[s] == 0) ready.push_back(s);
  }
  int removed = 0;
  while (!ready.empty()) {
    int s = ready.front();
    ready.pop_front();
    ++removed;
    for (int t : edges[s]) {
      if (--in_degree[t] == 0) ready.push_back(t);
    }
  }
  return removed == live;
}

}  // namespace

TabularMdp::TabularMdp(Data data) : data_(std::move(data)) {
  const int n = data_.num_states;
  const int m = data_.num_actions;
  require(n > 0, "num_states must be positive");
  require(m > 0, "num_actions must be positive");
  require(data_.discount >= 0.0 && data_.discount <= 1.0,
          "discount must lie in [0, 1]");
  require(data_.transitions.size() == static_cast<size_t>(n) * m,
          "transition table must have num_states * num_actions rows");
  require(data_.reward.rows() == n && data_.reward.cols() == m,
          "reward table shape mismatch");
  require(data_.initial_distribution.size() == static_cast<size_t>(n),
          "initial distribution size mismatch");
  require(data_.terminal.size() == static_cast<size_t>(n),
          "terminal mask size mismatch");
  require(data_.reward.allFinite(), "rewards must be finite");

  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < m; ++a) {
      auto& outs = data_.transitions[static_cast<size_t>(s) * m + a];
      require(!outs.empty(), "every (state, action) needs a successor");
      double total = 0.0;
      for (const Outcome& o : outs) {
        require(o.next_state >= 0 && o.next_state < n,
                "successor index out of range");
        require(o.probability >= 0.0 && o.probability <= 1.0,
                "transition probability outside [0, 1]");
        total += o.probability;
      }
      require(std::abs(total - 1.0) <= kRowSumTolerance,
              "transition row (" + std::to_string(s) + ", " +
                  std::to_string(a) + ") does not sum to 1");
      if (outs.size() != 1) deterministic_ = false;
      if (data_.terminal[s]) {
        require(outs.size() == 1 && outs[0].next_state == s &&
                    data_.reward(s, a) == 0.0,
                "terminal state " + std::to_string(s) +
                    " must self-loop with reward 0");
      }
    }
  }

  double init_total = 0.0;
  for (double p : data_.initial_distribution) {
    require(p >= 0.0 && p <= 1.0, "initial probability outside [0, 1]");
    init_total += p;
  }
  require(std::abs(init_total - 1.0) <= kRowSumTolerance,
          "initial distribution does not sum to 1");

  episodic_dag_ = non_terminal_graph_is_acyclic(*this);
  require(data_.discount < 1.0 || episodic_dag_,
          "discount 1 requires every trajectory to terminate (episodic DAG)");
}

double TabularMdp::probability(int state, int action, int next_state) const {
  double p = 0.0;
  for (const Outcome& o : successors(state, action)) {
    if (o.next_state == next_state) p += o.probability;
  }
  return p;
}

void TabularMdp::write_matrix_dump(std::ostream& os) const {
  const auto old_precision = os.precision(17);
  std::vector<double> row(num_states());
  for (int s = 0; s < num_states(); ++s) {
    for (int a = 0; a < num_actions(); ++a) {
      std::fill(row.begin(), row.end(), 0.0);
      for (const Outcome& o : successors(s, a)) row[o.next_state] += o.probability;
      for (double p : row) os << p << ' ';
      os << reward(s, a) << '\n';
    }
  }
  os.precision(old_precision);
}

ObservationCodec::ObservationCodec(Eigen::MatrixXd features)
    : features_(std::move(features)) {
  if (features_.rows() == 0) {
    throw ConstructionError("observation codec needs a positive dimension");
  }
  if (!features_.allFinite()) {
    throw ConstructionError("observation features must be finite");
  }
}

Eigen::MatrixXd ObservationCodec::encode_all(std::span<const int> states) const {
  Eigen::MatrixXd out(features_.rows(), static_cast<Eigen::Index>(states.size()));
  for (size_t i = 0; i < states.size(); ++i) out.col(i) = features_.col(states[i]);
  return out;
}

int catch_state_index(int rows, int cols, int ball_x, int ball_y, int paddle_x) {
  (void)rows;
  return (ball_y * cols + ball_x) * cols + paddle_x;
}

Environment build_catch(int rows, int cols) {
  if (rows < 2) throw ConstructionError("catch needs at least 2 rows");
  if (cols < 1 || cols % 2 == 0) {
    throw ConstructionError("catch needs an odd, positive number of columns");
  }
  const int n = rows * cols * cols;
  TabularMdp::Data d;
  d.num_states = n;
  d.num_actions = 3;
  d.discount = 1.0;
  d.transitions.resize(static_cast<size_t>(n) * 3);
  d.reward = Eigen::MatrixXd::Zero(n, 3);
  d.initial_distribution.assign(n, 0.0);
  d.terminal.assign(n, false);

  StateAnnotation ann;
  ann.axes = {"ball_x", "ball_y", "paddle_x"};
  ann.coordinates.resize(n);
  Eigen::MatrixXd features = Eigen::MatrixXd::Zero((rows + 1) * cols, n);

  for (int by = 0; by < rows; ++by) {
    for (int bx = 0; bx < cols; ++bx) {
      for (int px = 0; px < cols; ++px) {
        const int s = catch_state_index(rows, cols, bx, by, px);
        ann.coordinates[s] = {bx, by, px};
        features(by * cols + bx, s) = 1.0;
        features(rows * cols + px, s) = 1.0;
        const bool terminal = by == rows - 1;
        d.terminal[s] = terminal;
        for (int a = 0; a < 3; ++a) {
          auto& outs = d.transitions[static_cast<size_t>(s) * 3 + a];
          if (terminal) {
            outs = {{s, 1.0}};
            continue;
          }
          const int npx = std::clamp(px + a - 1, 0, cols - 1);
          const int nby = by + 1;
          outs = {{catch_state_index(rows, cols, bx, nby, npx), 1.0}};
          if (nby == rows - 1) d.reward(s, a) = npx == bx ? 1.0 : -1.0;
        }
      }
    }
  }
  for (int bx = 0; bx < cols; ++bx) {
    d.initial_distribution[catch_state_index(rows, cols, bx, 0, cols / 2)] =
        1.0 / cols;
  }
  return Environment{"catch", TabularMdp(std::move(d)),
                     ObservationCodec(std::move(features)), std::move(ann)};
}

Environment build_four_rooms(int size, double discount) {
  if (size < 5) throw ConstructionError("four rooms needs size >= 5");
  if (!(discount >= 0.0 && discount < 1.0)) {
    throw ConstructionError("four rooms discount must lie in [0, 1)");
  }
  const int mid = size / 2;
  const int door_low = (mid - 1) / 2;
  const int door_high = (mid + 1 + size - 1) / 2;
  auto is_wall = [&](int x, int y) {
    if (x == mid) return y != door_low && y != door_high;
    if (y == mid) return x != door_low && x != door_high;
    return false;
  };

  std::vector<int> index(static_cast<size_t>(size) * size, -1);
  StateAnnotation ann;
  ann.axes = {"x", "y"};
  int n = 0;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if (is_wall(x, y)) continue;
      index[y * size + x] = n++;
      ann.coordinates.push_back({x, y});
    }
  }
  const int start = index[0];
  const int goal = index[(size - 1) * size + (size - 1)];

  TabularMdp::Data d;
  d.num_states = n;
  d.num_actions = 4;
  d.discount = discount;
  d.transitions.resize(static_cast<size_t>(n) * 4);
  d.reward = Eigen::MatrixXd::Zero(n, 4);
  d.initial_distribution.assign(n, 0.0);
  d.initial_distribution[start] = 1.0;
  d.terminal.assign(n, false);
  d.terminal[goal] = true;

  constexpr int kDx[4] = {0, 0, -1, 1};
  constexpr int kDy[4] = {-1, 1, 0, 0};
  for (int s = 0; s < n; ++s) {
    const int x = ann.coordinates[s][0];
    const int y = ann.coordinates[s][1];
    for (int a = 0; a < 4; ++a) {
      auto& outs = d.transitions[static_cast<size_t>(s) * 4 + a];
      if (s == goal) {
        outs = {{s, 1.0}};
        continue;
      }
      int nx = x + kDx[a];
      int ny = y + kDy[a];
      if (nx < 0 || ny < 0 || nx >= size || ny >= size || is_wall(nx, ny)) {
        nx = x;
        ny = y;
      }
      const int next = index[ny * size + nx];
      outs = {{next, 1.0}};
      if (next == goal) d.reward(s, a) = 1.0;
    }
  }
  Eigen::MatrixXd features = Eigen::MatrixXd::Identity(n, n);
  return Environment{"four-rooms", TabularMdp(std::move(d)),
                     ObservationCodec(std::move(features)), std::move(ann)};
}

TwoArmBandit build_two_arm_bandit(std::array<double, 2> q_init,
                                  std::array<double, 2> q_target) {
  TabularMdp::Data d;
  d.num_states = 1;
  d.num_actions = 2;
  d.discount = 0.0;
  d.transitions = {{{0, 1.0}}, {{0, 1.0}}};
  d.reward = Eigen::MatrixXd(1, 2);
  d.reward << q_target[0], q_target[1];
  d.initial_distribution = {1.0};
  d.terminal = {false};
  return TwoArmBandit{TabularMdp(std::move(d)), q_init};
}

// Layout: state 0 is the decision state, 1..L the green chain, L+1..2L the
// blue chain, 2L+1 the absorbing end. Green and blue both advance inside a
// chain; red stays put for free. Leaving the t-th chain state pays
//   green: 1 at t = 1, (1 + 1/gamma) at odd t >= 3
//   blue:  (1 + 1/gamma) at even t
// so the k-step lookahead difference between the two arms at state 0 is
// (-1)^(k+1) gamma^k for every k <= L.
ChainMdp build_chain_mdp(int arm_length, double discount) {
  if (arm_length < 2) throw ConstructionError("chain arm_length must be >= 2");
  if (!(discount > 0.0 && discount < 1.0)) {
    throw ConstructionError("chain discount must lie in (0, 1)");
  }
  const int L = arm_length;
  const int n = 2 * L + 2;
  const int end = n - 1;
  const double big = 1.0 + 1.0 / discount;
  auto green = [&](int t) { return 1 + (t - 1); };
  auto blue = [&](int t) { return 1 + L + (t - 1); };

  TabularMdp::Data d;
  d.num_states = n;
  d.num_actions = 3;
  d.discount = discount;
  d.transitions.resize(static_cast<size_t>(n) * 3);
  d.reward = Eigen::MatrixXd::Zero(n, 3);
  d.initial_distribution.assign(n, 0.0);
  d.initial_distribution[0] = 1.0;
  d.terminal.assign(n, false);
  d.terminal[end] = true;

  auto set = [&](int s, int a, int next, double r) {
    d.transitions[static_cast<size_t>(s) * 3 + a] = {{next, 1.0}};
    d.reward(s, a) = r;
  };
  StateAnnotation ann;
  ann.axes = {"arm", "position"};
  ann.coordinates.assign(n, {0, 0});

  set(0, kGreen, green(1), 0.0);
  set(0, kBlue, blue(1), 0.0);
  set(0, kRed, 0, 0.0);
  for (int t = 1; t <= L; ++t) {
    const int g = green(t);
    const int b = blue(t);
    const int g_next = t == L ? end : green(t + 1);
    const int b_next = t == L ? end : blue(t + 1);
    const double g_reward = t == 1 ? 1.0 : (t % 2 == 1 ? big : 0.0);
    const double b_reward = t % 2 == 0 ? big : 0.0;
    for (int a : {kGreen, kBlue}) {
      set(g, a, g_next, g_reward);
      set(b, a, b_next, b_reward);
    }
    set(g, kRed, g, 0.0);
    set(b, kRed, b, 0.0);
    ann.coordinates[g] = {1, t};
    ann.coordinates[b] = {2, t};
  }
  for (int a = 0; a < 3; ++a) set(end, a, end, 0.0);
  ann.coordinates[end] = {3, 0};

  Eigen::MatrixXd features = Eigen::MatrixXd::Identity(n, n);
  return ChainMdp{Environment{"chain", TabularMdp(std::move(d)),
                              ObservationCodec(std::move(features)),
                              std::move(ann)},
                  0};
}

Environment build_deep_sea(int depth) {
  if (depth < 2) throw ConstructionError("deep sea depth must be >= 2");
  // Cell (row, col) with col <= row; row-major triangular indexing.
  auto cell = [](int row, int col) { return row * (row + 1) / 2 + col; };
  const int cells = depth * (depth + 1) / 2;
  const int end = cells;
  const int n = cells + 1;
  const double move_cost = 0.01 / depth;

  TabularMdp::Data d;
  d.num_states = n;
  d.num_actions = 2;
  d.discount = 1.0;
  d.transitions.resize(static_cast<size_t>(n) * 2);
  d.reward = Eigen::MatrixXd::Zero(n, 2);
  d.initial_distribution.assign(n, 0.0);
  d.initial_distribution[cell(0, 0)] = 1.0;
  d.terminal.assign(n, false);
  d.terminal[end] = true;

  StateAnnotation ann;
  ann.axes = {"row", "col"};
  ann.coordinates.assign(n, {depth, depth});
  Eigen::MatrixXd features = Eigen::MatrixXd::Zero(depth * depth, n);

  for (int row = 0; row < depth; ++row) {
    for (int col = 0; col <= row; ++col) {
      const int s = cell(row, col);
      ann.coordinates[s] = {row, col};
      features(row * depth + col, s) = 1.0;
      for (int a : {kDeepSeaLeft, kDeepSeaRight}) {
        const bool right = a == kDeepSeaRight;
        const int ncol = right ? col + 1 : std::max(col - 1, 0);
        const int next = row + 1 == depth ? end : cell(row + 1, ncol);
        double r = right ? -move_cost : 0.0;
        if (row + 1 == depth && right && col == depth - 1) r += 1.0;
        d.transitions[static_cast<size_t>(s) * 2 + a] = {{next, 1.0}};
        d.reward(s, a) = r;
      }
    }
  }
  for (int a = 0; a < 2; ++a) d.transitions[static_cast<size_t>(end) * 2 + a] = {{end, 1.0}};

  return Environment{"deep-sea", TabularMdp(std::move(d)),
                     ObservationCodec(std::move(features)), std::move(ann)};
}

std::vector<int> reachable_states(const TabularMdp& mdp) {
  std::vector<bool> seen(mdp.num_states(), false);
  std::deque<int> frontier;
  for (int s = 0; s < mdp.num_states(); ++s) {
    if (mdp.initial_distribution()[s] > 0.0) {
      seen[s] = true;
      frontier.push_back(s);
    }
  }
  while (!frontier.empty()) {
    const int s = frontier.front();
    frontier.pop_front();
    for (int a = 0; a < mdp.num_actions(); ++a) {
      for (const Outcome& o : mdp.successors(s, a)) {
        if (o.probability > 0.0 && !seen[o.next_state]) {
          seen[o.next_state] = true;
          frontier.push_back(o.next_state);
        }
      }
    }
  }
  std::vector<int> out;
  for (int s = 0; s < mdp.num_states(); ++s) {
    if (seen[s]) out.push_back(s);
  }
  return out;
}

int sample_categorical(std::span<const double> probs, std::mt19937_64& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  for (size_t i = probs.size(); i-- > 0;) {
    if (probs[i] > 0.0) return static_cast<int>(i);
  }
  return 0;
}

}  // namespace churn_lab
