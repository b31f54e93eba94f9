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

#include "churn_lab/learners.h"

#include <algorithm>
#include <cmath>
#include <utility>

#include "churn_lab/dp.h"
#include "churn_lab/errors.h"

namespace churn_lab {

ReplayBuffer::ReplayBuffer(int capacity) : capacity_(capacity) {
  if (capacity < 1) throw ValidationError("replay capacity must be >= 1");
  items_.reserve(static_cast<size_t>(capacity));
}

void ReplayBuffer::add(const Transition& t) {
  if (size() < capacity_) {
    items_.push_back(t);
  } else {
    items_[cursor_] = t;
  }
  cursor_ = (cursor_ + 1) % capacity_;
}

std::vector<int> ReplayBuffer::sample(int batch_size, std::mt19937_64& rng) const {
  if (batch_size < 1 || size() < batch_size) {
    throw ValidationError("replay: cannot sample " + std::to_string(batch_size) +
                          " from " + std::to_string(size()) + " transitions");
  }
  std::vector<int> idx(batch_size);
  for (int& i : idx) i = uniform_index(rng, size());
  return idx;
}

namespace {

struct VariantInfo {
  Variant variant;
  const char* name;
};

constexpr VariantInfo kVariants[] = {
    {Variant::kTabularQl, "tabular-ql"},
    {Variant::kMlpQl1, "mlp-ql-1layer"},
    {Variant::kMlpQl3, "mlp-ql-3layer"},
    {Variant::kRegressQstar, "regress-qstar"},
    {Variant::kClonePistar, "clone-pistar"},
    {Variant::kDqnLike, "dqn-like"},
    {Variant::kAdvantageLearning, "advantage-learning"},
    {Variant::kMcTarget, "mc-target"},
    {Variant::kStationaryData, "stationary-data"},
    {Variant::kFrozenLayers, "frozen-layers"},
};

}  // namespace

std::string variant_name(Variant v) {
  for (const auto& info : kVariants) {
    if (info.variant == v) return info.name;
  }
  throw ValidationError("unknown variant");
}

Variant parse_variant(const std::string& name) {
  for (const auto& info : kVariants) {
    if (name == info.name) return info.variant;
  }
  std::string known;
  for (const auto& info : kVariants) known += std::string(known.empty() ? "" : ", ") + info.name;
  throw ValidationError("unknown variant '" + name + "' (known: " + known + ")");
}

bool uses_replay(Variant v) {
  switch (v) {
    case Variant::kDqnLike:
    case Variant::kAdvantageLearning:
    case Variant::kMcTarget:
    case Variant::kStationaryData:
    case Variant::kFrozenLayers:
      return true;
    default:
      return false;
  }
}

bool uses_network(Variant v) { return v != Variant::kTabularQl; }

std::string optimizer_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::kSgd:
      return "sgd";
    case OptimizerKind::kRmsProp:
      return "rmsprop";
    case OptimizerKind::kAdam:
      return "adam";
  }
  return "?";
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "rmsprop") return OptimizerKind::kRmsProp;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ValidationError("unknown optimizer '" + name + "' (known: sgd, rmsprop, adam)");
}

LearnerConfig LearnerConfig::defaults(Variant v) {
  LearnerConfig c;
  c.variant = v;
  switch (v) {
    case Variant::kTabularQl:
      c.learning_rate = 0.1;
      c.batch_size = 1;
      c.optimizer = OptimizerKind::kSgd;
      c.hidden_layers = {};
      break;
    case Variant::kMlpQl1:
    case Variant::kRegressQstar:
    case Variant::kClonePistar:
      c.learning_rate = 0.1;
      c.batch_size = 1;
      c.optimizer = OptimizerKind::kSgd;
      c.hidden_layers = {25};
      break;
    case Variant::kMlpQl3:
      c.learning_rate = 0.1;
      c.batch_size = 1;
      c.optimizer = OptimizerKind::kSgd;
      c.hidden_layers = {25, 25, 25};
      break;
    default:
      break;
  }
  c.learning_rate_end = c.learning_rate;
  return c;
}

void LearnerConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ValidationError("config field '" + field + "': " + why);
  };
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
    fail("learning_rate", "must be finite and >= 0");
  }
  if (!std::isfinite(learning_rate_end) || learning_rate_end < 0.0) {
    fail("learning_rate_end", "must be finite and >= 0");
  }
  if (anneal_steps < 0) fail("anneal_steps", "must be >= 0");
  if (anneal_steps > 0 && learning_rate != learning_rate_end &&
      (learning_rate == 0.0 || learning_rate_end == 0.0)) {
    fail("learning_rate_end", "log-linear anneal needs positive endpoints");
  }
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (!uses_replay(variant) && batch_size != 1) {
    fail("batch_size", "online variant " + variant_name(variant) + " updates on single transitions");
  }
  if (!(optimizer_epsilon > 0.0)) fail("optimizer_epsilon", "must be > 0");
  if (!(rmsprop_decay >= 0.0 && rmsprop_decay < 1.0)) fail("rmsprop_decay", "must be in [0, 1)");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail("adam_beta1", "must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("adam_beta2", "must be in [0, 1)");
  if (!(exploration_epsilon >= 0.0 && exploration_epsilon <= 1.0)) {
    fail("exploration_epsilon", "must be in [0, 1]");
  }
  for (int h : hidden_layers) {
    if (h < 1) fail("hidden_layers", "sizes must be >= 1");
  }
  if (uses_replay(variant) && replay_capacity < batch_size) {
    fail("replay_capacity", "must hold at least one batch");
  }
  if (acting_interval < 1) fail("acting_interval", "must be >= 1");
  if (target_interval < 0) fail("target_interval", "must be >= 0 (0 disables)");
  if (variant == Variant::kTabularQl) {
    if (learning_rate > 1.0) fail("learning_rate", "tabular step size must be in [0, 1]");
    if (acting_interval != 1 || target_interval != 0) {
      fail("acting_interval", "tabular learner acts and bootstraps from its table");
    }
  }
  if (!(gap_coefficient >= 0.0 && gap_coefficient <= 1.0)) {
    fail("gap_coefficient", "must be in [0, 1]");
  }
  const int layers = static_cast<int>(hidden_layers.size()) + 1;
  if (trainable_top_layers < 1 || trainable_top_layers > layers) {
    fail("trainable_top_layers", "must be in [1, " + std::to_string(layers) + "]");
  }
  if (episode_budget < 1) fail("episode_budget", "must be >= 1");
  if (convergence_check_interval < 1) fail("convergence_check_interval", "must be >= 1");
  if (min_post_updates < 1) fail("min_post_updates", "must be >= 1");
  if (post_multiple < 0) fail("post_multiple", "must be >= 0");
}

void tabular_q_step(QTable& q, const Transition& t, double alpha, double discount) {
  const double bootstrap = t.terminal ? 0.0 : q.row(t.next_state).maxCoeff();
  q(t.state, t.action) += alpha * (t.reward + discount * bootstrap - q(t.state, t.action));
}

double compute_target(const Transition& t, double discount, const QTable& q_reference,
                      const TargetSpec& spec) {
  switch (spec.mode) {
    case TargetMode::kQl:
    case TargetMode::kAl: {
      double y = t.reward;
      if (!t.terminal) y += discount * q_reference.row(t.next_state).maxCoeff();
      if (spec.mode == TargetMode::kAl) {
        const double deficit =
            q_reference.row(t.state).maxCoeff() - q_reference(t.state, t.action);
        y -= spec.gap_coefficient * deficit;
      }
      return y;
    }
    case TargetMode::kMc:
      if (!t.mc_return) throw ValidationError("Monte-Carlo target needs the return-to-go");
      return *t.mc_return;
    case TargetMode::kQstar:
      if (spec.qstar == nullptr) throw ValidationError("q* target needs the optimal table");
      return (*spec.qstar)(t.state, t.action);
  }
  return 0.0;
}

int act(std::span<const double> q_values, double epsilon, std::mt19937_64& rng) {
  const int n = static_cast<int>(q_values.size());
  if (uniform01(rng) < epsilon) return uniform_index(rng, n);
  int best = 0;
  for (int a = 1; a < n; ++a) {
    if (q_values[a] > q_values[best]) best = a;
  }
  return best;
}

ConvergenceTest::ConvergenceTest(const TabularMdp& mdp, double tolerance)
    : mdp_(&mdp), tolerance_(tolerance) {
  const auto& init = mdp.initial_distribution();
  for (int s = 0; s < mdp.num_states(); ++s) {
    if (init[s] > 0.0) starts_.push_back(s);
  }
  const QTable q_star = value_iteration(mdp).final_q;
  optimal_values_ = q_star.rowwise().maxCoeff();
}

std::optional<Eigen::VectorXd> ConvergenceTest::state_values(
    std::span<const int> greedy_actions) const {
  const Policy pi = Policy::deterministic(greedy_actions, mdp_->num_actions());
  QTable q;
  try {
    q = exact_policy_evaluation(*mdp_, pi);
  } catch (const SingularSystemError&) {
    return std::nullopt;
  }
  Eigen::VectorXd v(mdp_->num_states());
  for (int s = 0; s < mdp_->num_states(); ++s) v[s] = q(s, greedy_actions[s]);
  return v;
}

bool ConvergenceTest::converged(std::span<const int> greedy_actions) const {
  const auto v = state_values(greedy_actions);
  if (!v) return false;
  for (int s : starts_) {
    if ((*v)[s] < optimal_values_[s] - tolerance_) return false;
  }
  return true;
}

std::optional<double> ConvergenceTest::expected_return(
    std::span<const int> greedy_actions) const {
  const auto v = state_values(greedy_actions);
  if (!v) return std::nullopt;
  double total = 0.0;
  for (int s : starts_) total += mdp_->initial_distribution()[s] * (*v)[s];
  return total;
}

bool detect_convergence(const TabularMdp& mdp, std::span<const int> greedy_actions) {
  return ConvergenceTest(mdp).converged(greedy_actions);
}

uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(stream), 0x636875u};
  uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<uint64_t>(out[0]) << 32) | out[1];
}

namespace {

int first_argmax(const QTable& q, int s) {
  int best = 0;
  for (int a = 1; a < q.cols(); ++a) {
    if (q(s, a) > q(s, best)) best = a;
  }
  return best;
}

QTable forward_table(const MlpParams& params, const Eigen::MatrixXd& features) {
  return mlp_forward_batch(params, features).transpose();
}

// All bookkeeping that happens after an update: greedy recomputation, churn,
// delayed churn, action gaps and per-state switch events.
class ChurnMonitor {
 public:
  ChurnMonitor(std::vector<int> reach, const QTable& q, bool record_switches)
      : reach_(std::move(reach)), record_switches_(record_switches), ring_(kRing) {
    ring_[0] = greedy_of(q);
  }

  ChurnRecord observe(int64_t t, const QTable& q, std::vector<SwitchEvent>* events) {
    std::vector<int>& now = ring_[t % kRing];
    now = greedy_of(q);
    const std::vector<int>& before = ring_[(t - 1) % kRing];
    int switches = 0;
    for (size_t i = 0; i < reach_.size(); ++i) {
      if (now[i] != before[i]) {
        ++switches;
        if (record_switches_) events->push_back({t, reach_[i]});
      }
    }
    ChurnRecord rec;
    rec.t = t;
    rec.churn = fraction(switches);
    if (t >= 10) rec.churn_at10 = switch_fraction(ring_[(t - 10) % kRing], now);
    if (t >= 100) rec.churn_at100 = switch_fraction(ring_[(t - 100) % kRing], now);
    double gap = 0.0;
    for (int s : reach_) gap += action_gap(q, s);
    rec.mean_gap = gap / static_cast<double>(reach_.size());
    return rec;
  }

 private:
  static constexpr int64_t kRing = 101;

  std::vector<int> greedy_of(const QTable& q) const {
    std::vector<int> g(reach_.size());
    for (size_t i = 0; i < reach_.size(); ++i) g[i] = first_argmax(q, reach_[i]);
    return g;
  }
  double fraction(int switches) const {
    return static_cast<double>(switches) / static_cast<double>(reach_.size());
  }

  std::vector<int> reach_;
  bool record_switches_;
  std::vector<std::vector<int>> ring_;
};

}  // namespace

RunResult train_variant(const Environment& env, const LearnerConfig& config, uint64_t seed) {
  config.validate();
  const TabularMdp& mdp = env.mdp;
  const Variant v = config.variant;
  const bool network = uses_network(v);
  const bool replay = uses_replay(v);
  if (network && env.codec.num_states() != mdp.num_states()) {
    throw ValidationError("observation codec does not cover the MDP's states");
  }
  const Eigen::MatrixXd& features = env.codec.features();
  const int num_actions = mdp.num_actions();
  const double discount = mdp.discount();

  std::mt19937_64 rng(derive_seed(seed, 2));
  const ConvergenceTest test(mdp);

  TargetSpec target_spec;
  QTable qstar;
  Eigen::MatrixXd pistar;
  if (v == Variant::kAdvantageLearning) {
    target_spec.mode = TargetMode::kAl;
    target_spec.gap_coefficient = config.gap_coefficient;
  } else if (v == Variant::kMcTarget) {
    target_spec.mode = TargetMode::kMc;
  } else if (v == Variant::kRegressQstar || v == Variant::kClonePistar) {
    qstar = value_iteration(mdp).final_q;
    target_spec.mode = TargetMode::kQstar;
    target_spec.qstar = &qstar;
    pistar = greedy(qstar, TieMode::kShare, 1e-9).probabilities();
  }

  MlpParams params;
  std::optional<Optimizer> optimizer;
  FreezeMask mask;
  QTable q;
  if (network) {
    MlpSpec spec{env.codec.feature_dimension(), config.hidden_layers, num_actions};
    params = mlp_init(spec, derive_seed(seed, 1));
    OptimizerConfig oc;
    oc.kind = config.optimizer;
    oc.schedule = config.anneal_steps > 0
                      ? LearningRateSchedule::log_linear(config.learning_rate,
                                                         config.learning_rate_end,
                                                         config.anneal_steps)
                      : LearningRateSchedule::constant(config.learning_rate);
    oc.rmsprop_decay = config.rmsprop_decay;
    oc.epsilon = config.optimizer_epsilon;
    oc.adam_beta1 = config.adam_beta1;
    oc.adam_beta2 = config.adam_beta2;
    optimizer.emplace(oc, params);
    mask = FreezeMask::all_trainable(params.num_layers());
    q = forward_table(params, features);
  } else {
    q = QTable::Zero(mdp.num_states(), num_actions);
  }

  const std::vector<int> reach = reachable_states(mdp);
  ChurnMonitor monitor(reach, q, config.record_switches);
  RunResult result;
  std::vector<ChurnRecord> records;

  // Behaviour comes from `q` unless a lagged or frozen acting copy exists.
  bool separate_acting = network && config.acting_interval > 1;
  bool behaviour_frozen = false;
  QTable acting_q = q;
  QTable target_q;
  if (config.target_interval > 0) target_q = q;

  ReplayBuffer buffer(replay ? config.replay_capacity : 1);
  std::vector<Transition> pending;

  int64_t t = 0;
  int64_t stop_at = -1;
  std::optional<int64_t> convergence;

  auto learn = [&](const Transition& current) {
    if (!network) {
      tabular_q_step(q, current, config.learning_rate, discount);
      return true;
    }
    std::vector<const Transition*> batch;
    if (replay) {
      if (buffer.size() < config.batch_size) return false;
      for (int i : buffer.sample(config.batch_size, rng)) batch.push_back(&buffer.at(i));
    } else {
      batch.push_back(&current);
    }
    const int n = static_cast<int>(batch.size());
    Eigen::MatrixXd obs(features.rows(), n);
    for (int j = 0; j < n; ++j) obs.col(j) = features.col(batch[j]->state);
    LossAndGrad lg;
    if (v == Variant::kClonePistar) {
      DistributionBatch db{obs, Eigen::MatrixXd(num_actions, n)};
      for (int j = 0; j < n; ++j) {
        db.target_probabilities.col(j) = pistar.row(batch[j]->state).transpose();
      }
      lg = loss_and_grad(params, db);
    } else {
      const QTable& reference = config.target_interval > 0 ? target_q : q;
      SelectedActionBatch sb{obs, std::vector<int>(n), Eigen::VectorXd(n)};
      for (int j = 0; j < n; ++j) {
        sb.actions[j] = batch[j]->action;
        sb.targets[j] = compute_target(*batch[j], discount, reference, target_spec);
      }
      lg = loss_and_grad(params, sb);
    }
    optimizer->step(params, lg.gradient, mask);
    q = forward_table(params, features);
    return true;
  };

  auto on_converged = [&]() {
    convergence = t;
    result.post_updates = std::max(config.min_post_updates, config.post_multiple * t);
    stop_at = t + result.post_updates;
    if (v == Variant::kStationaryData) {
      behaviour_frozen = true;
      separate_acting = true;
      acting_q = q;
    }
    if (v == Variant::kFrozenLayers) {
      mask = FreezeMask::top_layers(params.num_layers(), config.trainable_top_layers);
    }
  };

  const auto& init = mdp.initial_distribution();
  int64_t episode = 0;
  bool done = false;
  while (!done) {
    if (!convergence && episode >= config.episode_budget) break;
    ++episode;
    int s = sample_categorical(init, rng);
    pending.clear();
    while (!mdp.is_terminal(s)) {
      const QTable& behaviour = separate_acting ? acting_q : q;
      Eigen::VectorXd row = behaviour.row(s).transpose();
      const int a = act(std::span<const double>(row.data(), static_cast<size_t>(row.size())),
                        config.exploration_epsilon, rng);
      const int next = mdp.sample_next(s, a, rng);
      Transition tr{s, a, mdp.reward(s, a), next, mdp.is_terminal(next), std::nullopt};
      if (v == Variant::kMcTarget) {
        pending.push_back(tr);
      } else if (replay) {
        buffer.add(tr);
      }
      if (v == Variant::kMcTarget && tr.terminal) {
        double g = 0.0;
        for (auto it = pending.rbegin(); it != pending.rend(); ++it) {
          g = it->reward + discount * g;
          it->mc_return = g;
        }
        for (const Transition& p : pending) buffer.add(p);
        pending.clear();
      }
      s = next;

      if (!learn(tr)) continue;
      ++t;
      records.push_back(monitor.observe(t, q, &result.switches));
      if (separate_acting && !behaviour_frozen && t % config.acting_interval == 0) acting_q = q;
      if (config.target_interval > 0 && t % config.target_interval == 0) target_q = q;
      if (stop_at >= 0 && t >= stop_at) {
        done = true;
        break;
      }
    }
    if (done) break;
    if (!convergence && episode % config.convergence_check_interval == 0) {
      const std::vector<int> g = greedy_actions(q);
      const auto ret = test.expected_return(g);
      if (!records.empty() && ret) records.back().eval_return = *ret;
      if (test.converged(g)) on_converged();
      if (convergence && result.post_updates == 0) done = true;
    }
  }

  for (const ChurnRecord& r : records) result.trace.append(r);
  result.converged = convergence.has_value();
  result.convergence_step = convergence;
  if (convergence) result.trace.set_convergence_step(*convergence);
  if (!convergence) result.post_updates = 0;
  result.episodes = episode;
  result.updates = t;
  if (network) {
    result.params = std::move(params);
  } else {
    result.table = std::move(q);
  }
  return result;
}

}  // namespace churn_lab
