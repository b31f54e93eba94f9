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

// Named experiment suites, parallel execution of (cell, seed) units, record
// files, per-state period maps and order-statistic aggregation.
//
// Layout under an output directory:
//   <out>/<suite>/schema.txt
//   <out>/<suite>/summary.csv
//   <out>/<suite>/aggregate.csv
//   <out>/<suite>/perstate.csv          (suites that record switches)
//   <out>/<suite>/<cell>/<seed>/trace.csv
//   <out>/<suite>/<cell>/<seed>/switches.csv
//   <out>/<suite>/<cell>/<seed>/error.txt (failed units only)

#ifndef CHURN_LAB_HARNESS_H_
#define CHURN_LAB_HARNESS_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "churn_lab/learners.h"
#include "churn_lab/mdp.h"
#include "churn_lab/metrics.h"

namespace churn_lab {

enum class CellKind { kLearner, kValueIteration, kPolicyIteration, kOracle, kBandit, kChain };
enum class EnvId { kCatch, kFourRooms, kDeepSea, kBandit, kChain };

// Fixed settings of the analytic cells.
inline constexpr int kDeepSeaDepth = 10;
inline constexpr int kChainArmLength = 64;
inline constexpr int kChainSteps = 50;
inline constexpr std::array<double, 2> kBanditInit = {0.0, 0.001};
inline constexpr std::array<double, 2> kBanditTarget = {10.0, 10.001};
inline constexpr double kBanditStepSize = 0.01;
inline constexpr int kBanditUpdates = 2000;

struct Cell {
  std::string label;
  CellKind kind = CellKind::kLearner;
  EnvId env = EnvId::kCatch;
  LearnerConfig config;
  // Extra key=value pairs shown by `list` after the common ones.
  std::vector<std::pair<std::string, std::string>> extra_settings;
};

struct Suite {
  std::string id;
  std::vector<Cell> cells;
  int default_seeds = 1;
  // Analog experiments are labelled as such in their summary files.
  std::string note;
};

const std::vector<std::string>& suite_ids();
Suite make_suite(const std::string& id);
Environment make_environment(EnvId env);
// "key=value,..." listing of a cell's settings.
std::string cell_settings(const Cell& cell);
std::string env_name(EnvId env);
EnvId parse_env(const std::string& name);

// The two policies of the chain evaluation demo: pi takes red everywhere,
// pi' advances along both arms and stays at the decision state.
std::pair<Policy, Policy> chain_demo_policies(const ChainMdp& chain);

// Result of one (cell, seed) unit before it is written out.
struct UnitRecord {
  ChurnTrace trace;
  bool converged = false;
  std::optional<int64_t> convergence_step;
  int64_t post_updates = 0;
  int64_t episodes = 0;
  std::vector<SwitchEvent> switches;
  bool has_switches = false;
};

UnitRecord run_cell(const Cell& cell, const Environment& env, uint64_t seed);

struct RunMeta {
  std::string suite;
  std::string cell;
  uint64_t seed = 0;
  std::string env;
  bool converged = false;
  std::optional<int64_t> convergence_step;
  int64_t post_updates = 0;
  int64_t episodes = 0;
  int64_t rows = 0;
};

void write_trace(std::ostream& os, const RunMeta& meta, const ChurnTrace& trace);
void write_switches(std::ostream& os, const std::vector<SwitchEvent>& events);

struct ParsedTrace {
  RunMeta meta;
  ChurnTrace trace;
};
// Throws ValidationError with the line number of the first bad row.
ParsedTrace read_trace(std::istream& is, const std::string& name);
std::vector<SwitchEvent> read_switches(std::istream& is, const std::string& name);

struct SummaryRow {
  std::string suite;
  std::string cell;
  uint64_t seed = 0;
  bool converged = false;
  std::optional<int64_t> convergence_step;
  std::optional<double> w0p;
  std::optional<double> w_plus;
  std::optional<double> mean_gap;
  int64_t post_updates = 0;
  int64_t episodes = 0;
  int64_t updates = 0;
  double total_change = 0.0;
};

// Folds a parsed trace into its summary row; throws if the trace is shorter
// than its metadata promises.
SummaryRow summarize(const ParsedTrace& parsed);
void write_summary(std::ostream& os, const std::vector<SummaryRow>& rows,
                   const std::string& note);
std::vector<SummaryRow> read_summary(std::istream& is, const std::string& name);

struct OrderStats {
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
};
// Linear interpolation between order statistics; throws on empty input.
double percentile(std::vector<double> values, double q);
OrderStats order_statistics(const std::vector<double>& values);

struct CellAggregate {
  std::string cell;
  int runs = 0;
  int converged = 0;
  double converged_fraction = 0.0;
  // Keyed by metric name (P, w0p, w_plus, mean_gap); absent when every run was filtered.
  std::map<std::string, OrderStats> metrics;
  std::string status;  // "ok" or "all-runs-filtered"
};

// Non-converged rows are filtered. Cells keep their order of first appearance.
std::vector<CellAggregate> aggregate(const std::vector<SummaryRow>& rows);
void write_aggregate(std::ostream& os, const std::vector<CellAggregate>& cells);

inline constexpr std::array<const char*, 4> kPeriods = {"early", "pre", "post", "late"};

// Per-state mean churn in [0,P/2), [P/2,P), [P,2P), [2P,end], indexed
// [period][state]; NaN where a window holds no updates.
struct PerStateMap {
  std::array<Eigen::VectorXd, 4> mean_churn;
};
PerStateMap bucket_per_state(const std::vector<SwitchEvent>& events, int num_states,
                             std::optional<int64_t> convergence_step, int64_t last_update);

// Averages maps across runs, ignoring NaN windows; writes one row per
// (cell, period, reachable state) with the state's annotation and optimal gap.
struct PerStateSummary {
  std::string cell;
  int runs = 0;
  PerStateMap map;
};
PerStateSummary average_maps(const std::string& cell, const std::vector<PerStateMap>& maps);
void write_perstate(std::ostream& os, const std::vector<PerStateSummary>& cells,
                    const Environment& env);

struct RunOptions {
  std::filesystem::path out_dir;
  std::vector<uint64_t> seeds;
  int workers = 1;
};

struct SuiteReport {
  std::filesystem::path suite_dir;
  std::vector<SummaryRow> rows;
  std::vector<std::string> failures;
};

// Runs every (cell, seed) unit, writes per-run files, then merges summary,
// aggregate and per-state files from what was written.
SuiteReport run_suite(const Suite& suite, const RunOptions& options);

struct AnalyzeReport {
  std::vector<std::filesystem::path> suite_dirs;
  std::vector<std::string> problems;
};

// Recomputes summary / aggregate / per-state files of every suite directory
// under `in_dir` (or just `suite`) from the trace files; reports corrupt
// traces and disagreements with an existing summary.
AnalyzeReport analyze(const std::filesystem::path& in_dir,
                      const std::optional<std::string>& suite);

// Writes the schema description of every record file.
void write_schema(std::ostream& os);

int default_workers(size_t units);

}  // namespace churn_lab

#endif  // CHURN_LAB_HARNESS_H_
