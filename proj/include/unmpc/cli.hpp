// Copyright 2026 The urban-nmpc Authors
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

#ifndef UNMPC__CLI_HPP_
#define UNMPC__CLI_HPP_

#include <filesystem>
#include <optional>
#include <string>

#include "unmpc/config_io.hpp"
#include "unmpc/simulator.hpp"

namespace unmpc
{

enum ExitCode : int {
  kExitOk = 0,
  kExitConfigError = 2,
  kExitCollision = 3,
  kExitPlannerExhaustion = 4,
  kExitBudgetViolation = 5
};

struct RunConfig
{
  std::filesystem::path scenario_path;
  std::filesystem::path params_path;
  std::filesystem::path planner_path;
  std::filesystem::path out_dir{"out"};
  std::filesystem::path from_summary;  // re-run from an effective-config echo
  std::optional<std::uint64_t> seed;
  std::string mode{"closed-loop"};  // closed-loop | single-solve | self-test
  bool dump_qp{false};
  bool strict_timing{false};
};

/// Execute the selected mode; writes run.csv, planner.jsonl, perf.jsonl,
/// summary.json, perf.json and the plot CSVs into the output directory.
/// Exit codes: 0 ok, 2 config error, 3 collision, 4 planner exhaustion,
/// 5 budget violation in strict-timing mode.
int run(const RunConfig & config);

/// Plot-ready CSVs: trajectory overlay with per-cycle predictions, state and
/// input series, per-sub-planner CPU time series.
void emit_plot_data(
  const SimLog & log, const Scenario & scenario, const std::filesystem::path & out_dir);

void write_run_csv(const SimLog & log, const Scenario & scenario, const std::filesystem::path &);
void write_planner_jsonl(const SimLog & log, const std::filesystem::path &);
void write_perf_jsonl(const SimLog & log, const std::filesystem::path &);

}  // namespace unmpc

#endif  // UNMPC__CLI_HPP_
