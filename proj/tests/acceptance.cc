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

// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "churn_lab/csv.h"
#include "churn_lab/dp.h"
#include "churn_lab/harness.h"
#include "churn_lab/learners.h"
#include "churn_lab/metrics.h"
#include "churn_lab/mlp.h"
#include "test_util.h"

namespace {

using namespace churn_lab;
using churn_lab::testing::scratch_dir;
using churn_lab::testing::sign_test_p;
using Clock = std::chrono::steady_clock;
namespace fs = std::filesystem;

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

int workers_for(size_t units) {
  if (const char* env = std::getenv("CHURN_LAB_WORKERS")) {
    if (const auto v = parse_int(env); v && *v > 0) return static_cast<int>(*v);
  }
  return default_workers(units);
}

std::vector<uint64_t> seed_range(int n) {
  std::vector<uint64_t> s;
  for (int i = 0; i < n; ++i) s.push_back(static_cast<uint64_t>(i));
  return s;
}

SuiteReport run(const Suite& suite, int seeds, const fs::path& out) {
  RunOptions options{out, seed_range(seeds), workers_for(suite.cells.size() * seeds)};
  SuiteReport r = run_suite(suite, options);
  for (const std::string& f : r.failures) std::printf("  unit failure: %s\n", f.c_str());
  return r;
}

Suite only_cells(Suite suite, const std::vector<std::string>& labels) {
  std::vector<Cell> kept;
  for (const Cell& c : suite.cells) {
    if (std::find(labels.begin(), labels.end(), c.label) != labels.end()) kept.push_back(c);
  }
  suite.cells = kept;
  return suite;
}

std::map<uint64_t, SummaryRow> rows_of(const SuiteReport& r, const std::string& cell) {
  std::map<uint64_t, SummaryRow> out;
  for (const SummaryRow& row : r.rows) {
    if (row.cell == cell) out[row.seed] = row;
  }
  return out;
}

double median_of(std::vector<double> v) { return v.empty() ? NAN : percentile(v, 0.5); }

// Wins of `lhs < rhs` (strict) over seeds where both values exist; ties dropped.
struct Paired {
  int wins = 0;
  int trials = 0;
  double p = 1.0;
};

Paired paired_less(const std::map<uint64_t, SummaryRow>& lhs,
                   const std::map<uint64_t, SummaryRow>& rhs,
                   const std::function<std::optional<double>(const SummaryRow&)>& metric) {
  Paired out;
  for (const auto& [seed, a] : lhs) {
    auto it = rhs.find(seed);
    if (it == rhs.end()) continue;
    const auto x = metric(a);
    const auto y = metric(it->second);
    if (!x || !y || *x == *y) continue;
    ++out.trials;
    if (*x < *y) ++out.wins;
  }
  out.p = out.trials > 0 ? sign_test_p(out.wins, out.trials) : 1.0;
  return out;
}

std::string paired_text(const Paired& p) {
  return std::to_string(p.wins) + "/" + std::to_string(p.trials) + " seeds, sign-test p=" +
         fmt(p.p, 3);
}

void catch_value_iteration() {
  const auto start = Clock::now();
  const Environment env = build_catch();
  const DpTrace vi = value_iteration(env.mdp);
  const double w = vi.cumulative_churn();
  const double secs = seconds_since(start);
  report("Catch value iteration", vi.convergence_step == 10 && std::abs(w - 0.09) <= 0.03 && secs < 1.0,
         "P=" + std::to_string(vi.convergence_step) + " W0:P=" + fmt(w) + " (target 0.09 +/- 0.03), " +
             fmt(secs, 3) + " s");
}

void four_rooms_dp() {
  const auto start = Clock::now();
  const Environment env = build_four_rooms();
  const DpTrace vi = value_iteration(env.mdp);
  const DpTrace pi = policy_iteration(env.mdp);
  const std::vector<int> reach = reachable_states(env.mdp);
  const StateWeighting mu = StateWeighting::uniform(reach, env.mdp.num_states());
  const double oracle = oracle_change(vi.policies.front(), vi.policies.back(), mu);
  const double secs = seconds_since(start);
  const bool pass = pi.convergence_step <= 5 && pi.cumulative_churn() > 1.0 &&
                    vi.cumulative_churn() <= oracle + 0.2 && oracle <= 1.0 && secs < 10.0;
  report("FourRooms dynamic programming", pass,
         "PI " + std::to_string(pi.convergence_step) + " steps W0:P=" + fmt(pi.cumulative_churn()) +
             "; VI " + std::to_string(vi.convergence_step) + " sweeps W0:P=" +
             fmt(vi.cumulative_churn()) + "; oracle " + fmt(oracle) + "; " + fmt(secs, 3) +
             " s (original layout reports VI 37/0.57, PI 3/1.82; not asserted)");
}

void chain_oscillation() {
  const auto start = Clock::now();
  const ChainMdp chain = build_chain_mdp(kChainArmLength);
  const auto [pi, pi_prime] = chain_demo_policies(chain);
  const auto steps = evaluation_churn_demo(chain.env.mdp, pi, pi_prime, 50, chain.distinguished_state);
  int ones = 0;
  for (const auto& s : steps) ones += s.churn == 1.0;
  const double secs = seconds_since(start);
  report("Chain evaluation oscillation", ones == 50 && steps.size() == 50 && secs < 1.0,
         std::to_string(ones) + "/50 steps with W(pi_k, pi_k+1 | s) = 1, " + fmt(secs, 3) + " s");
}

void bandit_churn() {
  const auto start = Clock::now();
  const Environment env = make_environment(EnvId::kBandit);
  const Suite suite = make_suite("bandit-churn");
  const UnitRecord rec = run_cell(suite.cells.front(), env, 0);
  int64_t longest = 0;
  int64_t current = 0;
  for (const ChurnRecord& r : rec.trace.records()) {
    current = r.churn == 1.0 ? current + 1 : 0;
    longest = std::max(longest, current);
  }
  const double secs = seconds_since(start);
  report("Bandit unbounded churn", longest >= 100 && secs < 1.0,
         "q_init=(0, 0.001) targets=(10, 10.001) alpha=0.01 alternating arms: " +
             std::to_string(longest) + " consecutive argmax switches, " + fmt(secs, 3) + " s");
}

void catch_spectrum(const fs::path& out, SuiteReport& spectrum) {
  const auto start = Clock::now();
  const Suite suite = make_suite("catch-spectrum");
  const int workers = workers_for(suite.cells.size() * 30);
  spectrum = run(suite, 30, out);
  const double secs = seconds_since(start);

  bool converged_ok = spectrum.failures.empty();
  std::string conv_text;
  std::map<std::string, double> median_w0p;
  for (const CellAggregate& c : aggregate(spectrum.rows)) {
    converged_ok = converged_ok && c.runs == 30 && c.converged_fraction >= 0.95;
    conv_text += " " + c.cell + "=" + std::to_string(c.converged) + "/" + std::to_string(c.runs);
    if (c.metrics.count("w0p")) median_w0p[c.cell] = c.metrics.at("w0p").median;
  }
  std::vector<double> wplus;
  for (const auto& [seed, row] : rows_of(spectrum, "dqn-like-rmsprop")) {
    if (row.w_plus) wplus.push_back(*row.w_plus);
  }
  const double ratio = median_w0p["dqn-like-rmsprop"] / median_w0p["tabular-ql"];
  const double med_wplus = median_of(wplus);
  bool vi_smallest = median_w0p.count("value-iteration") > 0;
  for (const auto& [cell, m] : median_w0p) {
    if (cell != "value-iteration") vi_smallest = vi_smallest && median_w0p["value-iteration"] < m;
  }
  std::string medians;
  for (const Cell& c : suite.cells) medians += " " + c.label + "=" + fmt(median_w0p[c.label]);
  report("Catch spectrum", converged_ok && ratio >= 3.0 && med_wplus > 0.0 && vi_smallest && secs < 1800,
         "converged" + conv_text + "; median W0:P" + medians + "; dqn-like-rmsprop/tabular ratio " +
             fmt(ratio) + "; dqn-like-rmsprop median W+ " + fmt(med_wplus) + "; " + fmt(secs, 4) +
             " s on " + std::to_string(workers) + " worker(s)");
}

void catch_ablations(const fs::path& out, SuiteReport& ablations) {
  const Suite suite = only_cells(make_suite("catch-ablations"),
                                 {"ql", "advantage-learning", "stationary-data", "frozen-layers"});
  ablations = run(suite, 30, out);
  const auto ql = rows_of(ablations, "ql");
  const auto al = rows_of(ablations, "advantage-learning");

  // AL gap larger: count wins of QL gap < AL gap.
  const Paired gap = paired_less(ql, al, [](const SummaryRow& r) { return r.mean_gap; });
  const Paired churn = paired_less(al, ql, [](const SummaryRow& r) { return r.w_plus; });
  report("Advantage learning analog", gap.p < 0.05 && churn.p < 0.05,
         "AL gap > QL gap on " + paired_text(gap) + "; AL W+ < QL W+ on " + paired_text(churn));

  const auto frozen = rows_of(ablations, "frozen-layers");
  const Paired fz = paired_less(frozen, ql, [](const SummaryRow& r) { return r.w_plus; });
  std::vector<double> fw, cw;
  for (const auto& [s, r] : frozen) if (r.w_plus) fw.push_back(*r.w_plus);
  for (const auto& [s, r] : ql) if (r.w_plus) cw.push_back(*r.w_plus);
  report("Frozen-to-linear analog", fz.p < 0.05,
         "frozen W+ < control W+ on " + paired_text(fz) + "; median W+ frozen " +
             fmt(median_of(fw)) + " vs control " + fmt(median_of(cw)));

  std::vector<double> ratios;
  for (const auto& [seed, row] : rows_of(ablations, "stationary-data")) {
    if (!row.converged || *row.convergence_step == 0) continue;
    const fs::path path = ablations.suite_dir / "stationary-data" / std::to_string(seed) / "trace.csv";
    std::ifstream in(path);
    const ParsedTrace parsed = read_trace(in, path.string());
    const int64_t p = *row.convergence_step;
    const double before = *row.w0p / static_cast<double>(p);
    const double after = post_convergence_change(parsed.trace, p, p);
    if (before > 0.0) ratios.push_back(after / before);
  }
  const double med = median_of(ratios);
  report("Stationary-data analog", ratios.size() >= 1 && med > 0.25,
         "median ratio of per-update churn over the P updates after the behaviour freeze to the "
         "pre-freeze mean: " + fmt(med) + " over " + std::to_string(ratios.size()) + " seeds (> 0.25)");
}

void annealing(const fs::path& out) {
  const SuiteReport r = run(make_suite("catch-annealing"), 30, out);
  const auto constant = rows_of(r, "dqn-like-rmsprop-constant");
  const auto anneal = rows_of(r, "dqn-like-rmsprop-anneal");
  const Paired p = paired_less(anneal, constant, [](const SummaryRow& x) { return x.w_plus; });
  std::vector<double> a, c;
  for (const auto& [s, x] : anneal) if (x.w_plus) a.push_back(*x.w_plus);
  for (const auto& [s, x] : constant) if (x.w_plus) c.push_back(*x.w_plus);
  report("Learning-rate annealing", p.p < 0.05,
         "annealed W+ < constant W+ on " + paired_text(p) + "; medians " + fmt(median_of(a)) +
             " vs " + fmt(median_of(c)));
}

void per_state(const fs::path& out) {
  const SuiteReport r = run(make_suite("catch-perstate"), 100, out);
  std::ifstream in(r.suite_dir / "perstate.csv");
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  const auto header = split(line, ',');
  auto col = [&](const std::string& name) {
    return static_cast<size_t>(std::find(header.begin(), header.end(), name) - header.begin());
  };
  const size_t period = col("period"), terminal = col("terminal"), gap = col("optimal_gap"),
               churn = col("mean_churn"), runs = col("runs");
  double sum_gap = 0.0, sum_zero = 0.0;
  int n_gap = 0, n_zero = 0;
  std::string run_count;
  while (std::getline(in, line)) {
    const auto f = split(line, ',');
    if (f[period] != "post" || f[terminal] != "0" || f[churn].empty()) continue;
    run_count = f[runs];
    const double g = *parse_double(f[gap]);
    const double c = *parse_double(f[churn]);
    if (g > 1e-9) {
      sum_gap += c;
      ++n_gap;
    } else {
      sum_zero += c;
      ++n_zero;
    }
  }
  const double mean_gap_states = n_gap ? sum_gap / n_gap : NAN;
  const double mean_zero_states = n_zero ? sum_zero / n_zero : NAN;
  report("Per-state churn maps", n_gap > 0 && n_zero > 0 && mean_gap_states < mean_zero_states,
         "post-convergence mean churn " + fmt(mean_gap_states) + " over " + std::to_string(n_gap) +
             " nonzero-gap states vs " + fmt(mean_zero_states) + " over " + std::to_string(n_zero) +
             " zero-gap states (non-terminal, " + run_count + " converged runs)");
}

void deep_sea(const fs::path& out) {
  const Suite suite = only_cells(make_suite("deepsea-exploration"), {"eps0-acting1", "eps0-acting1000"});
  const SuiteReport r = run(suite, 30, out);
  int fast = 0, slow = 0;
  for (const auto& [s, row] : rows_of(r, "eps0-acting1")) fast += row.converged;
  for (const auto& [s, row] : rows_of(r, "eps0-acting1000")) slow += row.converged;
  report("DeepSea exploration analog", fast > slow,
         "epsilon=0 solved DeepSea(10) in " + std::to_string(fast) + "/30 seeds with acting interval 1 vs " +
             std::to_string(slow) + "/30 with interval 1000");
}

void numerical_suite() {
  const auto start = Clock::now();
  std::mt19937_64 rng(20260101);

  double worst_fd = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto c = testing::random_gradient_case(rng);
    SelectedActionBatch sb{c.observations, c.actions, c.targets};
    DistributionBatch db{c.observations, c.target_probabilities};
    worst_fd = std::max({worst_fd, finite_difference_check(c.params, sb),
                         finite_difference_check(c.params, db)});
  }

  int axiom_violations = 0;
  for (int i = 0; i < 1000; ++i) {
    const int ns = 1 + uniform_index(rng, 6), na = 2 + uniform_index(rng, 3);
    const Policy a = testing::random_policy(rng, ns, na);
    const Policy b = testing::random_policy(rng, ns, na);
    const Policy c = testing::random_policy(rng, ns, na);
    std::vector<int> all(ns);
    for (int s = 0; s < ns; ++s) all[s] = s;
    const StateWeighting mu = StateWeighting::uniform(all, ns);
    const double ab = aggregate_change(a, b, mu), ba = aggregate_change(b, a, mu);
    const double bc = aggregate_change(b, c, mu), ac = aggregate_change(a, c, mu);
    const bool ok = aggregate_change(a, a, mu) == 0.0 && std::abs(ab - ba) <= 1e-15 &&
                    ac <= ab + bc + 1e-12 && ab >= 0.0 && ab <= 1.0 &&
                    (ab > 0.0 || (a.probabilities() - b.probabilities()).cwiseAbs().maxCoeff() < 1e-12);
    axiom_violations += !ok;
  }

  double worst_vi_pi = 0.0;
  for (int i = 0; i < 50; ++i) {
    const TabularMdp mdp = testing::random_mdp(rng, 2 + uniform_index(rng, 10), 2 + uniform_index(rng, 3), 0.9);
    ValueIterationOptions vo;
    vo.tolerance = 1e-13;
    const DpTrace vi = value_iteration(mdp, vo);
    const DpTrace pi = policy_iteration(mdp);
    const Eigen::VectorXd v_vi = vi.final_q.rowwise().maxCoeff();
    const Eigen::VectorXd v_pi = pi.final_q.rowwise().maxCoeff();
    worst_vi_pi = std::max(worst_vi_pi, (v_vi - v_pi).lpNorm<Eigen::Infinity>());
  }

  int bound_violations = 0;
  for (int i = 0; i < 100; ++i) {
    const TabularMdp mdp = testing::random_mdp(rng, 2 + uniform_index(rng, 3), 2, 0.5, true, true);
    std::vector<int> actions(mdp.num_states());
    for (int& a : actions) a = uniform_index(rng, 2);
    const Policy ref = Policy::deterministic(actions, 2);
    const double lower = null_space_tied_diameter(mdp, ref).diameter_lower_bound;
    const double brute = null_space_diameter_bruteforce(mdp, ref);
    bound_violations += brute + 1e-12 < lower;
  }
  const double secs = seconds_since(start);
  report("Numerical suite",
         worst_fd <= 1e-4 && axiom_violations == 0 && worst_vi_pi <= 1e-8 && bound_violations == 0 &&
             secs < 120,
         "worst finite-difference error " + fmt(worst_fd, 3) + "; metric axiom violations " +
             std::to_string(axiom_violations) + "/1000; worst VI/PI gap " + fmt(worst_vi_pi, 3) +
             "; null-space bound violations " + std::to_string(bound_violations) + "/100; " +
             fmt(secs, 3) + " s");
}

bool same_tree(const fs::path& a, const fs::path& b, std::string* diff) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a));
  }
  size_t count_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) count_b += e.is_regular_file();
  if (files.size() != count_b) {
    *diff = "file counts differ";
    return false;
  }
  for (const fs::path& f : files) {
    if (testing::slurp(a / f) != testing::slurp(b / f)) {
      *diff = f.string();
      return false;
    }
  }
  *diff = std::to_string(files.size()) + " files";
  return true;
}

void determinism() {
  const fs::path root = scratch_dir("acceptance_determinism");
  bool ok = true;
  std::string detail;
  for (const auto& [id, seeds] : std::vector<std::pair<std::string, int>>{
           {"chain-oscillation", 1}, {"bandit-churn", 1}, {"dp-gridworld", 1},
           {"catch-cloning", 2}, {"catch-perstate", 2}, {"deepsea-exploration", 1}}) {
    const Suite suite = make_suite(id);
    run(suite, seeds, root / "a");
    run(suite, seeds, root / "b");
    std::string diff;
    const bool same = same_tree(root / "a" / id, root / "b" / id, &diff);
    ok = ok && same;
    detail += " " + id + (same ? " identical (" : " DIFFERS (") + diff + ")";
  }
  report("Determinism", ok, "re-run with identical seeds:" + detail);
}

}  // namespace

int main(int argc, char** argv) {
  // Optional arguments restrict the run to the named steps.
  const std::set<std::string> only(argv + 1, argv + argc);
  auto wanted = [&](const char* step) { return only.empty() || only.count(step) > 0; };
  const fs::path out = scratch_dir("acceptance");
  if (wanted("catch-vi")) catch_value_iteration();
  if (wanted("four-rooms")) four_rooms_dp();
  if (wanted("chain")) chain_oscillation();
  if (wanted("bandit")) bandit_churn();
  SuiteReport spectrum, ablations;
  if (wanted("spectrum")) catch_spectrum(out, spectrum);
  if (wanted("ablations")) catch_ablations(out, ablations);
  if (wanted("per-state")) per_state(out);
  if (wanted("annealing")) annealing(out);
  if (wanted("deep-sea")) deep_sea(out);
  if (wanted("numerical")) numerical_suite();
  if (wanted("determinism")) determinism();
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
