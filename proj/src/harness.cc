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

#include "churn_lab/harness.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "churn_lab/csv.h"
#include "churn_lab/dp.h"
#include "churn_lab/errors.h"

namespace churn_lab {

namespace fs = std::filesystem;

namespace {

constexpr const char* kTraceHeader = "t,churn,churn_at10,churn_at100,mean_gap,eval_return";
constexpr const char* kSwitchHeader = "t,state";
constexpr const char* kSummaryHeader =
    "suite,cell,seed,converged,P,w0p,w_plus,mean_gap,post_updates,episodes,updates,"
    "total_change";
constexpr const char* kAggregateHeader =
    "cell,metric,runs,converged,converged_fraction,median,q25,q75,status";
constexpr std::array<const char*, 4> kMetrics = {"P", "w0p", "w_plus", "mean_gap"};

Cell learner(std::string label, LearnerConfig config,
             std::vector<std::pair<std::string, std::string>> extra = {},
             EnvId env = EnvId::kCatch) {
  return Cell{std::move(label), CellKind::kLearner, env, std::move(config), std::move(extra)};
}

Cell analytic(std::string label, CellKind kind, EnvId env) {
  return Cell{std::move(label), kind, env, LearnerConfig{}, {}};
}

LearnerConfig dqn(OptimizerKind kind, double lr, double eps) {
  LearnerConfig c = LearnerConfig::defaults(Variant::kDqnLike);
  c.optimizer = kind;
  c.learning_rate = c.learning_rate_end = lr;
  c.optimizer_epsilon = eps;
  return c;
}

LearnerConfig dqn_rmsprop() { return dqn(OptimizerKind::kRmsProp, 1e-3, 1e-5); }

LearnerConfig with_variant(LearnerConfig c, Variant v) {
  c.variant = v;
  return c;
}

std::string width_label(int w) { return std::to_string(w); }

Suite build_suite(const std::string& id) {
  Suite s;
  s.id = id;
  if (id == "catch-spectrum") {
    s.default_seeds = 100;
    s.cells = {
        analytic("value-iteration", CellKind::kValueIteration, EnvId::kCatch),
        learner("tabular-ql", LearnerConfig::defaults(Variant::kTabularQl)),
        learner("mlp-ql-1layer", LearnerConfig::defaults(Variant::kMlpQl1)),
        learner("regress-qstar", LearnerConfig::defaults(Variant::kRegressQstar)),
        learner("mlp-ql-3layer", LearnerConfig::defaults(Variant::kMlpQl3)),
        learner("dqn-like-rmsprop", dqn_rmsprop()),
        learner("dqn-like-sgd", dqn(OptimizerKind::kSgd, 0.01, 1e-8)),
        learner("dqn-like-adam", dqn(OptimizerKind::kAdam, 1e-3, 1e-8)),
    };
  } else if (id == "catch-width") {
    s.default_seeds = 100;
    for (int w : {50, 200}) {
      LearnerConfig c = LearnerConfig::defaults(Variant::kMlpQl3);
      c.hidden_layers = {w, w, w};
      s.cells.push_back(learner("mlp-ql-3layer-w" + width_label(w), c, {{"width", width_label(w)}}));
    }
    for (int w : {50, 200}) {
      LearnerConfig c = dqn_rmsprop();
      c.hidden_layers = {w, w, w};
      s.cells.push_back(learner("dqn-like-w" + width_label(w), c, {{"width", width_label(w)}}));
    }
  } else if (id == "catch-cloning") {
    s.default_seeds = 100;
    s.cells = {learner("clone-pistar", LearnerConfig::defaults(Variant::kClonePistar),
                       {{"loss", "cross-entropy"}})};
  } else if (id == "catch-annealing") {
    s.default_seeds = 100;
    LearnerConfig anneal = dqn_rmsprop();
    anneal.learning_rate_end = 1e-4;
    anneal.anneal_steps = 10000;
    s.cells = {learner("dqn-like-rmsprop-constant", dqn_rmsprop()),
               learner("dqn-like-rmsprop-anneal", anneal,
                       {{"lr_end", "0.0001"}, {"anneal_steps", "10000"}})};
  } else if (id == "catch-perstate") {
    s.default_seeds = 1000;
    LearnerConfig c = dqn_rmsprop();
    c.record_switches = true;
    c.post_multiple = 2;
    s.cells = {learner("dqn-like-rmsprop", c, {{"record_switches", "1"}, {"post_multiple", "2"}})};
  } else if (id == "catch-ablations") {
    s.default_seeds = 100;
    s.note = "desk-scale analogs of the Atari ablations on Catch; not a reproduction";
    LearnerConfig al = with_variant(dqn_rmsprop(), Variant::kAdvantageLearning);
    s.cells = {
        learner("ql", dqn_rmsprop()),
        learner("advantage-learning", al, {{"gap_coefficient", format_double(al.gap_coefficient)}}),
        learner("stationary-data", with_variant(dqn_rmsprop(), Variant::kStationaryData),
                {{"freeze", "behaviour-after-P"}}),
        learner("mc-target", with_variant(dqn_rmsprop(), Variant::kMcTarget),
                {{"target", "monte-carlo"}}),
        learner("frozen-layers", with_variant(dqn_rmsprop(), Variant::kFrozenLayers),
                {{"trainable_top_layers", "1"}}),
    };
    for (int k : {1, 10, 100, 1000}) {
      LearnerConfig c = dqn_rmsprop();
      c.acting_interval = k;
      s.cells.push_back(learner("acting-interval-" + std::to_string(k), c,
                                {{"acting_interval", std::to_string(k)}}));
    }
  } else if (id == "dp-gridworld") {
    s.default_seeds = 1;
    s.cells = {analytic("value-iteration", CellKind::kValueIteration, EnvId::kFourRooms),
               analytic("policy-iteration", CellKind::kPolicyIteration, EnvId::kFourRooms),
               analytic("oracle", CellKind::kOracle, EnvId::kFourRooms)};
  } else if (id == "bandit-churn") {
    s.default_seeds = 1;
    s.cells = {analytic("alternating-arms", CellKind::kBandit, EnvId::kBandit)};
  } else if (id == "chain-oscillation") {
    s.default_seeds = 1;
    s.cells = {analytic("evaluation-demo", CellKind::kChain, EnvId::kChain)};
  } else if (id == "deepsea-exploration") {
    s.default_seeds = 30;
    s.note = "desk-scale analog of the Atari exploration result on DeepSea(10); not a reproduction";
    for (double eps : {0.1, 0.0}) {
      for (int k : {1, 1000}) {
        LearnerConfig c = dqn_rmsprop();
        c.exploration_epsilon = eps;
        c.acting_interval = k;
        c.episode_budget = 1000;
        c.convergence_check_interval = 10;
        s.cells.push_back(learner(
            "eps" + format_double(eps) + "-acting" + std::to_string(k), c,
            {{"epsilon", format_double(eps)},
             {"acting_interval", std::to_string(k)},
             {"episodes", "1000"}},
            EnvId::kDeepSea));
      }
    }
  } else {
    std::string known;
    for (const std::string& k : suite_ids()) known += (known.empty() ? "" : ", ") + k;
    throw ValidationError("unknown suite '" + id + "' (known: " + known + ")");
  }
  return s;
}

UnitRecord from_dp(const DpTrace& dp) {
  UnitRecord out;
  for (const DpIterate& it : dp.iterates) {
    if (it.index == 0) continue;
    ChurnRecord r;
    r.t = it.index;
    r.churn = it.churn;
    r.eval_return = it.greedy_return;
    out.trace.append(r);
  }
  out.converged = true;
  out.convergence_step = dp.convergence_step;
  out.trace.set_convergence_step(dp.convergence_step);
  return out;
}

}  // namespace

const std::vector<std::string>& suite_ids() {
  static const std::vector<std::string> kIds = {
      "catch-spectrum", "catch-width",  "catch-cloning",     "catch-annealing",
      "catch-perstate", "catch-ablations", "dp-gridworld",   "bandit-churn",
      "chain-oscillation", "deepsea-exploration"};
  return kIds;
}

Suite make_suite(const std::string& id) { return build_suite(id); }

std::string env_name(EnvId env) {
  switch (env) {
    case EnvId::kCatch:
      return "catch";
    case EnvId::kFourRooms:
      return "four-rooms";
    case EnvId::kDeepSea:
      return "deep-sea";
    case EnvId::kBandit:
      return "bandit";
    case EnvId::kChain:
      return "chain";
  }
  return "?";
}

EnvId parse_env(const std::string& name) {
  for (EnvId e : {EnvId::kCatch, EnvId::kFourRooms, EnvId::kDeepSea, EnvId::kBandit,
                  EnvId::kChain}) {
    if (env_name(e) == name) return e;
  }
  throw ValidationError("unknown environment '" + name + "'");
}


Environment make_environment(EnvId env) {
  switch (env) {
    case EnvId::kCatch:
      return build_catch();
    case EnvId::kFourRooms:
      return build_four_rooms();
    case EnvId::kDeepSea:
      return build_deep_sea(kDeepSeaDepth);
    case EnvId::kBandit: {
      TwoArmBandit b = build_two_arm_bandit(kBanditInit, kBanditTarget);
      return Environment{"bandit", std::move(b.mdp),
                         ObservationCodec(Eigen::MatrixXd::Identity(1, 1)),
                         StateAnnotation{{"state"}, {{0}}}};
    }
    case EnvId::kChain:
      return build_chain_mdp(kChainArmLength).env;
  }
  throw ValidationError("unknown environment");
}

std::string cell_settings(const Cell& cell) {
  std::string out;
  auto add = [&](const std::string& k, const std::string& v) {
    out += (out.empty() ? "" : ",") + k + "=" + v;
  };
  switch (cell.kind) {
    case CellKind::kLearner:
      add("lr", format_double(cell.config.learning_rate));
      add("batch", std::to_string(cell.config.batch_size));
      if (uses_replay(cell.config.variant)) {
        add("replay", std::to_string(cell.config.replay_capacity));
      }
      break;
    case CellKind::kValueIteration:
      add("algorithm", "value-iteration");
      break;
    case CellKind::kPolicyIteration:
      add("algorithm", "policy-iteration");
      break;
    case CellKind::kOracle:
      add("algorithm", "oracle");
      break;
    case CellKind::kBandit:
      add("lr", format_double(kBanditStepSize));
      add("updates", std::to_string(kBanditUpdates));
      break;
    case CellKind::kChain:
      add("arm_length", std::to_string(kChainArmLength));
      add("steps", std::to_string(kChainSteps));
      break;
  }
  for (const auto& [k, v] : cell.extra_settings) add(k, v);
  return out;
}

std::pair<Policy, Policy> chain_demo_policies(const ChainMdp& chain) {
  const int n = chain.env.mdp.num_states();
  std::vector<int> red(n, kRed);
  std::vector<int> advance(n, kGreen);
  advance[chain.distinguished_state] = kRed;
  return {Policy::deterministic(red, 3), Policy::deterministic(advance, 3)};
}

UnitRecord run_cell(const Cell& cell, const Environment& env, uint64_t seed) {
  switch (cell.kind) {
    case CellKind::kLearner: {
      RunResult r = train_variant(env, cell.config, seed);
      UnitRecord out;
      out.trace = std::move(r.trace);
      out.converged = r.converged;
      out.convergence_step = r.convergence_step;
      out.post_updates = r.post_updates;
      out.episodes = r.episodes;
      out.switches = std::move(r.switches);
      out.has_switches = cell.config.record_switches;
      return out;
    }
    case CellKind::kValueIteration:
      return from_dp(value_iteration(env.mdp));
    case CellKind::kPolicyIteration:
      return from_dp(policy_iteration(env.mdp));
    case CellKind::kOracle: {
      const DpTrace vi = value_iteration(env.mdp);
      const std::vector<int> reach = reachable_states(env.mdp);
      const StateWeighting mu = StateWeighting::uniform(reach, env.mdp.num_states());
      UnitRecord out;
      ChurnRecord r;
      r.t = 1;
      r.churn = oracle_change(vi.policies.front(), vi.policies.back(), mu);
      r.eval_return = vi.iterates.back().greedy_return;
      out.trace.append(r);
      out.converged = true;
      out.convergence_step = 1;
      out.trace.set_convergence_step(1);
      return out;
    }
    case CellKind::kBandit: {
      QTable q(1, 2);
      q << kBanditInit[0], kBanditInit[1];
      UnitRecord out;
      int prev = q(0, 1) > q(0, 0) ? 1 : 0;
      for (int t = 1; t <= kBanditUpdates; ++t) {
        const int arm = (t - 1) % 2;
        Transition tr{0, arm, env.mdp.reward(0, arm), 0, false, std::nullopt};
        tabular_q_step(q, tr, kBanditStepSize, env.mdp.discount());
        const int now = q(0, 1) > q(0, 0) ? 1 : 0;
        ChurnRecord r;
        r.t = t;
        r.churn = now != prev ? 1.0 : 0.0;
        r.mean_gap = std::abs(q(0, 1) - q(0, 0));
        out.trace.append(r);
        prev = now;
      }
      return out;
    }
    case CellKind::kChain: {
      const ChainMdp chain = build_chain_mdp(kChainArmLength);
      const auto [pi, pi_prime] = chain_demo_policies(chain);
      UnitRecord out;
      for (const EvaluationChurnStep& step : evaluation_churn_demo(
               chain.env.mdp, pi, pi_prime, kChainSteps, chain.distinguished_state)) {
        ChurnRecord r;
        r.t = step.k;
        r.churn = step.churn;
        out.trace.append(r);
      }
      return out;
    }
  }
  throw ValidationError("unknown cell kind");
}

void write_trace(std::ostream& os, const RunMeta& meta, const ChurnTrace& trace) {
  os << schema_line("trace") << '\n';
  os << "# run: suite=" << meta.suite << ",cell=" << meta.cell << ",seed=" << meta.seed
     << ",env=" << meta.env << ",converged=" << (meta.converged ? 1 : 0) << ",P="
     << (meta.convergence_step ? std::to_string(*meta.convergence_step) : "")
     << ",post_updates=" << meta.post_updates << ",episodes=" << meta.episodes
     << ",rows=" << trace.size() << '\n';
  os << kTraceHeader << '\n';
  for (const ChurnRecord& r : trace.records()) {
    os << r.t << ',' << format_double(r.churn) << ',' << format_optional(r.churn_at10) << ','
       << format_optional(r.churn_at100) << ',' << format_optional(r.mean_gap) << ','
       << format_optional(r.eval_return) << '\n';
  }
}

void write_switches(std::ostream& os, const std::vector<SwitchEvent>& events) {
  os << schema_line("switches") << '\n' << kSwitchHeader << '\n';
  for (const SwitchEvent& e : events) os << e.t << ',' << e.state << '\n';
}

namespace {

[[noreturn]] void row_error(const std::string& name, int line, const std::string& what) {
  throw ValidationError(name + ":" + std::to_string(line) + ": " + what);
}

void expect_schema(std::istream& is, const std::string& name, const std::string& schema,
                   int& line_no) {
  std::string line;
  ++line_no;
  if (!std::getline(is, line)) row_error(name, line_no, "empty file");
  const auto found = parse_schema_line(line);
  if (!found || *found != schema) {
    row_error(name, line_no,
              "expected '" + schema_line(schema) + "', found '" + line + "'");
  }
}

std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> out;
  for (const std::string& part : split(text, ',')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) continue;
    out[part.substr(0, eq)] = part.substr(eq + 1);
  }
  return out;
}

}  // namespace

ParsedTrace read_trace(std::istream& is, const std::string& name) {
  int line_no = 0;
  expect_schema(is, name, "trace", line_no);
  std::string line;
  ++line_no;
  constexpr std::string_view kRun = "# run: ";
  if (!std::getline(is, line) || line.rfind(kRun, 0) != 0) {
    row_error(name, line_no, "missing '# run:' metadata line");
  }
  auto kv = parse_key_values(std::string_view(line).substr(kRun.size()));
  ParsedTrace out;
  RunMeta& m = out.meta;
  auto need = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) row_error(name, line_no, std::string("metadata lacks '") + key + "'");
    return it->second;
  };
  auto need_int = [&](const char* key) {
    const auto v = parse_int(need(key));
    if (!v) row_error(name, line_no, std::string("metadata '") + key + "' is not an integer");
    return *v;
  };
  m.suite = need("suite");
  m.cell = need("cell");
  m.env = need("env");
  m.seed = static_cast<uint64_t>(need_int("seed"));
  m.converged = need_int("converged") != 0;
  if (!need("P").empty()) m.convergence_step = need_int("P");
  m.post_updates = need_int("post_updates");
  m.episodes = need_int("episodes");
  m.rows = need_int("rows");
  if (m.converged != m.convergence_step.has_value()) {
    row_error(name, line_no, "converged flag and P disagree");
  }

  ++line_no;
  if (!std::getline(is, line) || line != kTraceHeader) {
    row_error(name, line_no, std::string("expected header '") + kTraceHeader + "'");
  }
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 6) row_error(name, line_no, "expected 6 fields, found " + std::to_string(f.size()));
    ChurnRecord r;
    const auto t = parse_int(f[0]);
    const auto churn = parse_double(f[1]);
    if (!t || !churn) row_error(name, line_no, "unparseable t or churn");
    r.t = *t;
    r.churn = *churn;
    auto opt = [&](const std::string& field, std::optional<double>& into) {
      if (field.empty()) return;
      const auto v = parse_double(field);
      if (!v) row_error(name, line_no, "unparseable value '" + field + "'");
      into = *v;
    };
    opt(f[2], r.churn_at10);
    opt(f[3], r.churn_at100);
    opt(f[4], r.mean_gap);
    opt(f[5], r.eval_return);
    try {
      out.trace.append(r);
    } catch (const ValidationError& e) {
      row_error(name, line_no, e.what());
    }
  }
  if (m.convergence_step) out.trace.set_convergence_step(*m.convergence_step);
  return out;
}

std::vector<SwitchEvent> read_switches(std::istream& is, const std::string& name) {
  int line_no = 0;
  expect_schema(is, name, "switches", line_no);
  std::string line;
  ++line_no;
  if (!std::getline(is, line) || line != kSwitchHeader) {
    row_error(name, line_no, std::string("expected header '") + kSwitchHeader + "'");
  }
  std::vector<SwitchEvent> out;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 2) row_error(name, line_no, "expected 2 fields");
    const auto t = parse_int(f[0]);
    const auto s = parse_int(f[1]);
    if (!t || !s || *s < 0) row_error(name, line_no, "unparseable switch event");
    out.push_back({*t, static_cast<int>(*s)});
  }
  return out;
}

SummaryRow summarize(const ParsedTrace& parsed) {
  const RunMeta& m = parsed.meta;
  const ChurnTrace& trace = parsed.trace;
  const std::string run = m.suite + "/" + m.cell + "/" + std::to_string(m.seed);
  if (static_cast<int64_t>(trace.size()) != m.rows) {
    throw ValidationError("run " + run + ": trace has " + std::to_string(trace.size()) +
                          " rows but its metadata records " + std::to_string(m.rows));
  }
  SummaryRow row;
  row.suite = m.suite;
  row.cell = m.cell;
  row.seed = m.seed;
  row.converged = m.converged;
  row.post_updates = m.post_updates;
  row.episodes = m.episodes;
  row.updates = trace.last_update();
  for (const ChurnRecord& r : trace.records()) row.total_change += r.churn;
  if (m.converged) {
    const int64_t p = *m.convergence_step;
    row.convergence_step = p;
    try {
      row.w0p = cumulative_change(trace, p);
      if (m.post_updates > 0) {
        row.w_plus = post_convergence_change(trace, p, m.post_updates);
        double gap = 0.0;
        int64_t n = 0;
        for (const ChurnRecord& r : trace.records()) {
          if (r.t > p && r.t <= p + m.post_updates && r.mean_gap) {
            gap += *r.mean_gap;
            ++n;
          }
        }
        if (n > 0) row.mean_gap = gap / static_cast<double>(n);
      }
    } catch (const ValidationError& e) {
      throw ValidationError("run " + run + ": " + e.what());
    }
  }
  return row;
}

void write_summary(std::ostream& os, const std::vector<SummaryRow>& rows,
                   const std::string& note) {
  os << schema_line("summary") << '\n';
  if (!note.empty()) os << "# note: " << note << '\n';
  os << kSummaryHeader << '\n';
  for (const SummaryRow& r : rows) {
    os << r.suite << ',' << r.cell << ',' << r.seed << ',' << (r.converged ? 1 : 0) << ','
       << (r.convergence_step ? std::to_string(*r.convergence_step) : "") << ','
       << format_optional(r.w0p) << ',' << format_optional(r.w_plus) << ','
       << format_optional(r.mean_gap) << ',' << r.post_updates << ',' << r.episodes << ','
       << r.updates << ',' << format_double(r.total_change) << '\n';
  }
}

std::vector<SummaryRow> read_summary(std::istream& is, const std::string& name) {
  int line_no = 0;
  expect_schema(is, name, "summary", line_no);
  std::string line;
  bool header = false;
  std::vector<SummaryRow> out;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != kSummaryHeader) row_error(name, line_no, "unexpected summary header");
      header = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 12) row_error(name, line_no, "expected 12 fields");
    SummaryRow r;
    r.suite = f[0];
    r.cell = f[1];
    const auto seed = parse_int(f[2]);
    const auto conv = parse_int(f[3]);
    const auto post = parse_int(f[8]);
    const auto eps = parse_int(f[9]);
    const auto upd = parse_int(f[10]);
    const auto total = parse_double(f[11]);
    if (!seed || !conv || !post || !eps || !upd || !total) {
      row_error(name, line_no, "unparseable summary row");
    }
    r.seed = static_cast<uint64_t>(*seed);
    r.converged = *conv != 0;
    if (!f[4].empty()) {
      const auto p = parse_int(f[4]);
      if (!p) row_error(name, line_no, "unparseable P");
      r.convergence_step = *p;
    }
    auto opt = [&](const std::string& field, std::optional<double>& into) {
      if (field.empty()) return;
      const auto v = parse_double(field);
      if (!v) row_error(name, line_no, "unparseable value '" + field + "'");
      into = *v;
    };
    opt(f[5], r.w0p);
    opt(f[6], r.w_plus);
    opt(f[7], r.mean_gap);
    r.post_updates = *post;
    r.episodes = *eps;
    r.updates = *upd;
    r.total_change = *total;
    out.push_back(std::move(r));
  }
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("percentile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("percentile level must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

OrderStats order_statistics(const std::vector<double>& values) {
  return {percentile(values, 0.5), percentile(values, 0.25), percentile(values, 0.75)};
}

std::vector<CellAggregate> aggregate(const std::vector<SummaryRow>& rows) {
  std::vector<CellAggregate> out;
  std::map<std::string, std::map<std::string, std::vector<double>>> samples;
  for (const SummaryRow& r : rows) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const CellAggregate& c) { return c.cell == r.cell; });
    if (it == out.end()) {
      out.push_back(CellAggregate{r.cell, 0, 0, 0.0, {}, ""});
      it = out.end() - 1;
    }
    ++it->runs;
    if (!r.converged) continue;
    ++it->converged;
    auto& s = samples[r.cell];
    s["P"].push_back(static_cast<double>(*r.convergence_step));
    if (r.w0p) s["w0p"].push_back(*r.w0p);
    if (r.w_plus) s["w_plus"].push_back(*r.w_plus);
    if (r.mean_gap) s["mean_gap"].push_back(*r.mean_gap);
  }
  for (CellAggregate& c : out) {
    c.converged_fraction = static_cast<double>(c.converged) / static_cast<double>(c.runs);
    for (const auto& [metric, values] : samples[c.cell]) {
      c.metrics[metric] = order_statistics(values);
    }
    c.status = c.converged > 0 ? "ok" : "all-runs-filtered";
  }
  return out;
}

void write_aggregate(std::ostream& os, const std::vector<CellAggregate>& cells) {
  os << schema_line("aggregate") << '\n' << kAggregateHeader << '\n';
  for (const CellAggregate& c : cells) {
    for (const char* metric : kMetrics) {
      os << c.cell << ',' << metric << ',' << c.runs << ',' << c.converged << ','
         << format_double(c.converged_fraction) << ',';
      auto it = c.metrics.find(metric);
      if (it != c.metrics.end()) {
        os << format_double(it->second.median) << ',' << format_double(it->second.q25) << ','
           << format_double(it->second.q75);
      } else {
        os << ",,";
      }
      os << ',' << c.status << '\n';
    }
  }
}

PerStateMap bucket_per_state(const std::vector<SwitchEvent>& events, int num_states,
                             std::optional<int64_t> convergence_step, int64_t last_update) {
  if (!convergence_step) throw ValidationError("per-state maps need a converged run");
  const int64_t p = *convergence_step;
  const std::array<int64_t, 5> edges = {0, p / 2, p, 2 * p, last_update + 1};
  PerStateMap map;
  for (int k = 0; k < 4; ++k) {
    const int64_t lo = std::max<int64_t>(edges[k], 1);
    const int64_t hi = std::min<int64_t>(edges[k + 1], last_update + 1);
    const int64_t count = std::max<int64_t>(hi - lo, 0);
    map.mean_churn[k] = Eigen::VectorXd::Constant(
        num_states, count > 0 ? 0.0 : std::numeric_limits<double>::quiet_NaN());
  }
  for (const SwitchEvent& e : events) {
    if (e.state < 0 || e.state >= num_states) throw ValidationError("switch event state out of range");
    for (int k = 0; k < 4; ++k) {
      if (e.t >= edges[k] && e.t < edges[k + 1]) {
        map.mean_churn[k][e.state] += 1.0;
        break;
      }
    }
  }
  for (int k = 0; k < 4; ++k) {
    const int64_t lo = std::max<int64_t>(edges[k], 1);
    const int64_t hi = std::min<int64_t>(edges[k + 1], last_update + 1);
    if (hi > lo) map.mean_churn[k] /= static_cast<double>(hi - lo);
  }
  return map;
}

PerStateSummary average_maps(const std::string& cell, const std::vector<PerStateMap>& maps) {
  PerStateSummary out;
  out.cell = cell;
  out.runs = static_cast<int>(maps.size());
  if (maps.empty()) return out;
  const Eigen::Index n = maps.front().mean_churn[0].size();
  for (int k = 0; k < 4; ++k) {
    Eigen::VectorXd total = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd count = Eigen::VectorXd::Zero(n);
    for (const PerStateMap& m : maps) {
      for (Eigen::Index s = 0; s < n; ++s) {
        if (!std::isnan(m.mean_churn[k][s])) {
          total[s] += m.mean_churn[k][s];
          count[s] += 1.0;
        }
      }
    }
    out.map.mean_churn[k] = Eigen::VectorXd(n);
    for (Eigen::Index s = 0; s < n; ++s) {
      out.map.mean_churn[k][s] =
          count[s] > 0 ? total[s] / count[s] : std::numeric_limits<double>::quiet_NaN();
    }
  }
  return out;
}

void write_perstate(std::ostream& os, const std::vector<PerStateSummary>& cells,
                    const Environment& env) {
  const QTable q_star = value_iteration(env.mdp).final_q;
  const std::vector<int> reach = reachable_states(env.mdp);
  os << schema_line("perstate") << '\n' << "cell,runs,period,state";
  for (const std::string& axis : env.annotation.axes) os << ',' << axis;
  os << ",terminal,optimal_gap,mean_churn\n";
  for (const PerStateSummary& c : cells) {
    if (c.runs == 0) continue;
    for (int k = 0; k < 4; ++k) {
      for (int s : reach) {
        os << c.cell << ',' << c.runs << ',' << kPeriods[k] << ',' << s;
        for (int v : env.annotation.coordinates[s]) os << ',' << v;
        const double value = c.map.mean_churn[k][s];
        os << ',' << (env.mdp.is_terminal(s) ? 1 : 0) << ','
           << format_double(action_gap(q_star, s)) << ','
           << (std::isnan(value) ? std::string() : format_double(value)) << '\n';
      }
    }
  }
}

void write_schema(std::ostream& os) {
  os << "Record files written by churn_lab. Every CSV starts with '# schema: <name> v"
     << kSchemaVersion << "'; other lines starting with '#' are comments.\n\n";
  os << "trace v" << kSchemaVersion << " (<suite>/<cell>/<seed>/trace.csv)\n"
     << "  second line: # run: suite=,cell=,seed=,env=,converged=,P=,post_updates=,episodes=,rows=\n"
     << "  columns: " << kTraceHeader << "\n"
     << "  t is the update (or sweep) index; churn compares the greedy policy after update t\n"
     << "  with the one after update t-1; churn_at10/at100 compare against t-10/t-100.\n\n";
  os << "switches v" << kSchemaVersion << " (<suite>/<cell>/<seed>/switches.csv)\n"
     << "  columns: " << kSwitchHeader << "\n\n";
  os << "summary v" << kSchemaVersion << " (<suite>/summary.csv)\n"
     << "  columns: " << kSummaryHeader << "\n\n";
  os << "aggregate v" << kSchemaVersion << " (<suite>/aggregate.csv)\n"
     << "  columns: " << kAggregateHeader << "\n"
     << "  statistics over converged runs only; quantiles interpolate linearly.\n\n";
  os << "perstate v" << kSchemaVersion << " (<suite>/perstate.csv)\n"
     << "  columns: cell,runs,period,state,<state axes>,terminal,optimal_gap,mean_churn\n"
     << "  periods: early [0,P/2), pre [P/2,P), post [P,2P), late [2P,end].\n";
}

int default_workers(size_t units) {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  return static_cast<int>(std::max<size_t>(1, std::min<size_t>(hw, units)));
}

namespace {

struct UnitRef {
  size_t cell;
  uint64_t seed;
};

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  body(out);
  if (!out) throw Error("write failed for " + path.string());
}

// Parses, summarizes and buckets every run of one suite directory, in the order
// given by `cells` (labels) and ascending seed.
struct MergeResult {
  std::vector<SummaryRow> rows;
  std::vector<PerStateSummary> per_state;
  std::optional<EnvId> per_state_env;
  std::vector<std::string> problems;
};

MergeResult merge_suite(const fs::path& suite_dir, const std::vector<std::string>& cells,
                        bool report_failed_units) {
  MergeResult out;
  for (const std::string& cell : cells) {
    const fs::path cell_dir = suite_dir / cell;
    if (!fs::is_directory(cell_dir)) continue;
    std::vector<std::pair<uint64_t, fs::path>> seeds;
    for (const auto& entry : fs::directory_iterator(cell_dir)) {
      if (!entry.is_directory()) continue;
      const auto seed = parse_int(entry.path().filename().string());
      if (!seed || *seed < 0) continue;
      seeds.push_back({static_cast<uint64_t>(*seed), entry.path()});
    }
    std::sort(seeds.begin(), seeds.end());
    std::vector<PerStateMap> maps;
    std::optional<EnvId> env_id;
    std::optional<Environment> env;
    for (const auto& [seed, dir] : seeds) {
      const fs::path trace_path = dir / "trace.csv";
      if (!fs::exists(trace_path)) {
        if (report_failed_units && fs::exists(dir / "error.txt")) {
          out.problems.push_back("run " + (dir / "error.txt").string() + " failed");
        }
        continue;
      }
      try {
        std::ifstream in(trace_path, std::ios::binary);
        ParsedTrace parsed = read_trace(in, trace_path.string());
        SummaryRow row = summarize(parsed);
        const fs::path sw = dir / "switches.csv";
        if (fs::exists(sw) && row.converged) {
          std::ifstream sin(sw, std::ios::binary);
          const auto events = read_switches(sin, sw.string());
          const EnvId id = parse_env(parsed.meta.env);
          if (!env || *env_id != id) {
            env = make_environment(id);
            env_id = id;
          }
          maps.push_back(bucket_per_state(events, env->mdp.num_states(),
                                          row.convergence_step, row.updates));
        }
        out.rows.push_back(std::move(row));
      } catch (const Error& e) {
        out.problems.push_back(e.what());
      }
    }
    if (!maps.empty()) {
      out.per_state.push_back(average_maps(cell, maps));
      out.per_state_env = env_id;
    }
  }
  return out;
}

void write_merged(const fs::path& suite_dir, const MergeResult& merged, const std::string& note) {
  write_file(suite_dir / "summary.csv",
             [&](std::ostream& os) { write_summary(os, merged.rows, note); });
  write_file(suite_dir / "aggregate.csv",
             [&](std::ostream& os) { write_aggregate(os, aggregate(merged.rows)); });
  if (!merged.per_state.empty()) {
    const Environment env = make_environment(*merged.per_state_env);
    write_file(suite_dir / "perstate.csv",
               [&](std::ostream& os) { write_perstate(os, merged.per_state, env); });
  }
  write_file(suite_dir / "schema.txt", write_schema);
}

std::vector<std::string> cell_order(const fs::path& suite_dir) {
  std::vector<std::string> order;
  const std::string name = suite_dir.filename().string();
  if (std::find(suite_ids().begin(), suite_ids().end(), name) != suite_ids().end()) {
    for (const Cell& c : make_suite(name).cells) order.push_back(c.label);
  }
  std::vector<std::string> rest;
  if (fs::is_directory(suite_dir)) {
    for (const auto& entry : fs::directory_iterator(suite_dir)) {
      if (!entry.is_directory()) continue;
      const std::string label = entry.path().filename().string();
      if (std::find(order.begin(), order.end(), label) == order.end()) rest.push_back(label);
    }
  }
  std::sort(rest.begin(), rest.end());
  order.insert(order.end(), rest.begin(), rest.end());
  return order;
}

bool has_traces(const fs::path& suite_dir) {
  if (!fs::is_directory(suite_dir)) return false;
  for (const auto& cell : fs::directory_iterator(suite_dir)) {
    if (!cell.is_directory()) continue;
    for (const auto& seed : fs::directory_iterator(cell.path())) {
      if (seed.is_directory() && fs::exists(seed.path() / "trace.csv")) return true;
    }
  }
  return false;
}

std::string suite_note(const std::string& name) {
  if (std::find(suite_ids().begin(), suite_ids().end(), name) == suite_ids().end()) return "";
  return make_suite(name).note;
}

}  // namespace

SuiteReport run_suite(const Suite& suite, const RunOptions& options) {
  if (suite.cells.empty()) throw ValidationError("suite '" + suite.id + "' has no cells");
  if (options.seeds.empty()) throw ValidationError("at least one seed is required");
  std::set<std::string> labels;
  for (const Cell& c : suite.cells) {
    if (!labels.insert(c.label).second) throw ValidationError("duplicate cell label " + c.label);
    if (c.kind == CellKind::kLearner) c.config.validate();
  }

  SuiteReport report;
  report.suite_dir = options.out_dir / suite.id;
  std::error_code ec;
  fs::create_directories(report.suite_dir, ec);
  if (ec || !fs::is_directory(report.suite_dir)) {
    throw Error("cannot create output directory " + report.suite_dir.string());
  }

  std::map<EnvId, Environment> envs;
  for (const Cell& c : suite.cells) {
    if (!envs.count(c.env)) envs.emplace(c.env, make_environment(c.env));
  }

  std::vector<uint64_t> seeds = options.seeds;
  std::sort(seeds.begin(), seeds.end());
  seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());
  std::vector<UnitRef> units;
  for (size_t c = 0; c < suite.cells.size(); ++c) {
    for (uint64_t s : seeds) units.push_back({c, s});
  }

  std::atomic<size_t> next{0};
  std::mutex failures_mutex;
  auto worker = [&]() {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= units.size()) return;
      const Cell& cell = suite.cells[units[i].cell];
      const uint64_t seed = units[i].seed;
      const fs::path dir = report.suite_dir / cell.label / std::to_string(seed);
      try {
        fs::create_directories(dir);
        fs::remove(dir / "error.txt");
        fs::remove(dir / "switches.csv");
        UnitRecord rec = run_cell(cell, envs.at(cell.env), seed);
        RunMeta meta{suite.id,        cell.label,       seed,
                     env_name(cell.env), rec.converged,   rec.convergence_step,
                     rec.post_updates, rec.episodes,     static_cast<int64_t>(rec.trace.size())};
        write_file(dir / "trace.csv", [&](std::ostream& os) { write_trace(os, meta, rec.trace); });
        if (rec.has_switches) {
          write_file(dir / "switches.csv",
                     [&](std::ostream& os) { write_switches(os, rec.switches); });
        }
      } catch (const std::exception& e) {
        std::error_code ignore;
        fs::remove(dir / "trace.csv", ignore);
        std::ofstream err(dir / "error.txt");
        err << e.what() << '\n';
        std::lock_guard<std::mutex> lock(failures_mutex);
        report.failures.push_back(suite.id + "/" + cell.label + "/" + std::to_string(seed) +
                                  ": " + e.what());
      }
    }
  };
  const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(units.size())));
  std::vector<std::thread> threads;
  for (int w = 1; w < workers; ++w) threads.emplace_back(worker);
  worker();
  for (std::thread& t : threads) t.join();
  std::sort(report.failures.begin(), report.failures.end());

  std::vector<std::string> order;
  for (const Cell& c : suite.cells) order.push_back(c.label);
  for (const std::string& extra : cell_order(report.suite_dir)) {
    if (std::find(order.begin(), order.end(), extra) == order.end()) order.push_back(extra);
  }
  MergeResult merged = merge_suite(report.suite_dir, order, false);
  report.failures.insert(report.failures.end(), merged.problems.begin(), merged.problems.end());
  write_merged(report.suite_dir, merged, suite.note);
  report.rows = std::move(merged.rows);
  return report;
}

AnalyzeReport analyze(const fs::path& in_dir, const std::optional<std::string>& suite) {
  AnalyzeReport report;
  std::vector<fs::path> candidates;
  if (suite) {
    candidates.push_back(in_dir / *suite);
  } else {
    candidates.push_back(in_dir);
    if (fs::is_directory(in_dir)) {
      std::vector<fs::path> subdirs;
      for (const auto& entry : fs::directory_iterator(in_dir)) {
        if (entry.is_directory()) subdirs.push_back(entry.path());
      }
      std::sort(subdirs.begin(), subdirs.end());
      candidates.insert(candidates.end(), subdirs.begin(), subdirs.end());
    }
  }
  for (const fs::path& dir : candidates) {
    if (has_traces(dir)) report.suite_dirs.push_back(dir);
  }
  if (report.suite_dirs.empty()) {
    report.problems.push_back("no traces found under " + (suite ? (in_dir / *suite) : in_dir).string());
    return report;
  }
  for (const fs::path& dir : report.suite_dirs) {
    MergeResult merged = merge_suite(dir, cell_order(dir), true);
    report.problems.insert(report.problems.end(), merged.problems.begin(), merged.problems.end());

    const fs::path summary_path = dir / "summary.csv";
    if (fs::exists(summary_path)) {
      std::ostringstream fresh;
      write_summary(fresh, merged.rows, suite_note(dir.filename().string()));
      std::ifstream in(summary_path, std::ios::binary);
      std::stringstream existing;
      existing << in.rdbuf();
      if (existing.str() != fresh.str()) {
        std::vector<SummaryRow> old;
        try {
          std::istringstream is(existing.str());
          old = read_summary(is, summary_path.string());
        } catch (const Error& e) {
          report.problems.push_back(e.what());
        }
        auto key = [](const SummaryRow& r) {
          return r.suite + "/" + r.cell + "/" + std::to_string(r.seed);
        };
        std::map<std::string, std::string> old_lines;
        for (const SummaryRow& r : old) {
          std::ostringstream os;
          write_summary(os, {r}, "");
          old_lines[key(r)] = os.str();
        }
        bool named = false;
        for (const SummaryRow& r : merged.rows) {
          std::ostringstream os;
          write_summary(os, {r}, "");
          auto it = old_lines.find(key(r));
          if (it == old_lines.end()) {
            report.problems.push_back("run " + key(r) + " is missing from " + summary_path.string());
            named = true;
          } else if (it->second != os.str()) {
            report.problems.push_back("run " + key(r) + " disagrees with " + summary_path.string());
            named = true;
          }
          if (it != old_lines.end()) old_lines.erase(it);
        }
        for (const auto& [k, line] : old_lines) {
          report.problems.push_back("run " + k + " in " + summary_path.string() +
                                    " has no readable trace");
          named = true;
        }
        if (!named) {
          report.problems.push_back(summary_path.string() + " differs from the regenerated summary");
        }
      }
    }
    write_merged(dir, merged, suite_note(dir.filename().string()));
  }
  return report;
}

}  // namespace churn_lab
