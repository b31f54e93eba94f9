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

// churn_lab list | run | analyze

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "churn_lab/config.h"
#include "churn_lab/csv.h"
#include "churn_lab/errors.h"
#include "churn_lab/harness.h"

namespace {

using namespace churn_lab;

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;

int cmd_list() {
  for (const std::string& id : suite_ids()) {
    for (const Cell& cell : make_suite(id).cells) {
      std::cout << id << '\t' << cell.label << '\t' << cell_settings(cell) << '\n';
    }
  }
  return kOk;
}

Suite suite_from_config(const RunConfigDocument& doc) {
  if (doc.suite) {
    Suite base = make_suite(*doc.suite);
    for (Cell& cell : base.cells) {
      if (cell.label != doc.variant) continue;
      if (cell.kind == CellKind::kLearner) {
        apply_overrides(cell.config, doc.overrides);
      } else if (!doc.overrides.empty()) {
        throw ValidationError("cell '" + cell.label + "' of suite '" + base.id +
                              "' takes no overrides");
      }
      Suite one = base;
      one.cells = {cell};
      return one;
    }
    throw ValidationError("variant '" + doc.variant + "' is not a cell of suite '" + base.id + "'");
  }
  LearnerConfig config = LearnerConfig::defaults(parse_variant(doc.variant));
  apply_overrides(config, doc.overrides);
  Suite custom;
  custom.id = "custom";
  custom.cells = {Cell{doc.variant, CellKind::kLearner, EnvId::kCatch, config, {}}};
  return custom;
}

int resolve_workers(std::optional<int> flag, size_t units) {
  int workers = flag ? *flag : default_workers(units);
  if (const char* env = std::getenv("CHURN_LAB_WORKERS")) {
    const auto parsed = parse_int(env);
    if (!parsed || *parsed < 1) {
      throw ValidationError("CHURN_LAB_WORKERS must be a positive integer, got '" +
                            std::string(env) + "'");
    }
    workers = static_cast<int>(*parsed);
  }
  if (workers < 1) throw ValidationError("--workers must be >= 1");
  return workers;
}

int cmd_run(const std::optional<std::string>& suite_id,
            const std::optional<std::string>& config_path, std::optional<int> seeds,
            std::optional<std::string> out, std::optional<int> workers) {
  if (suite_id.has_value() == config_path.has_value()) {
    throw ValidationError("run needs exactly one of --suite or --config");
  }
  Suite suite;
  RunOptions options;
  if (suite_id) {
    suite = make_suite(*suite_id);
    const int n = seeds ? *seeds : suite.default_seeds;
    for (int s = 0; s < n; ++s) options.seeds.push_back(static_cast<uint64_t>(s));
  } else {
    const RunConfigDocument doc = load_run_config(*config_path);
    suite = suite_from_config(doc);
    if (seeds) {
      for (int s = 0; s < *seeds; ++s) options.seeds.push_back(static_cast<uint64_t>(s));
    } else {
      options.seeds = doc.seeds;
    }
    if (!out && doc.out_dir) out = doc.out_dir;
  }
  if (seeds && *seeds < 1) throw ValidationError("--seeds must be >= 1");
  options.out_dir = out ? *out : "results";
  options.workers = resolve_workers(workers, suite.cells.size() * options.seeds.size());

  const SuiteReport report = run_suite(suite, options);
  std::cout << (report.suite_dir / "summary.csv").string() << '\n';
  for (const std::string& f : report.failures) std::cerr << "error: " << f << '\n';
  return report.failures.empty() ? kOk : kRuntime;
}

int cmd_analyze(const std::string& in, const std::optional<std::string>& suite) {
  const AnalyzeReport report = analyze(in, suite);
  for (const auto& dir : report.suite_dirs) std::cout << (dir / "summary.csv").string() << '\n';
  for (const std::string& p : report.problems) std::cerr << "error: " << p << '\n';
  return report.problems.empty() ? kOk : kRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Policy churn lab: experiment suites, single runs and record analysis"};
  app.require_subcommand(1);

  app.add_subcommand("list", "List suites and cells with their settings");

  auto* run = app.add_subcommand("run", "Run a suite or a config document");
  std::optional<std::string> suite_id;
  std::optional<std::string> config_path;
  std::optional<int> seeds;
  std::optional<std::string> out;
  std::optional<int> workers;
  run->add_option("--suite", suite_id, "Built-in suite id");
  run->add_option("--config", config_path, "JSON run document");
  run->add_option("--seeds", seeds, "Number of seeds (indices 0..N-1)");
  run->add_option("--out", out, "Output directory (default: results)");
  run->add_option("--workers", workers, "Parallel units (CHURN_LAB_WORKERS overrides)");

  auto* an = app.add_subcommand("analyze", "Regenerate summaries from trace files");
  std::string in_dir;
  std::optional<std::string> an_suite;
  an->add_option("--in", in_dir, "Directory holding suite outputs")->required();
  an->add_option("--suite", an_suite, "Restrict to one suite directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (app.got_subcommand("list")) return cmd_list();
    if (app.got_subcommand("run")) return cmd_run(suite_id, config_path, seeds, out, workers);
    return cmd_analyze(in_dir, an_suite);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
}
