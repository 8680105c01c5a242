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

#include <CLI11.hpp>

#include "unmpc/cli.hpp"

int main(int argc, char ** argv)
{
  CLI::App app{"urban-nmpc: real-time NMPC trajectory planner and scenario simulator"};

  unmpc::RunConfig config;
  std::string scenario;
  std::string params;
  std::string planner;
  std::string out = "out";
  std::string from_summary;
  std::uint64_t seed = 0;
  bool seed_set = false;

  app.add_option("--scenario", scenario, "Scenario JSON file");
  app.add_option("--params", params, "Vehicle parameter JSON file");
  app.add_option("--planner", planner, "Planner configuration JSON file");
  app.add_option("--out", out, "Output directory")->capture_default_str();
  app.add_option("--seed", seed, "Override the scenario RNG seed")
    ->each([&](const std::string &) { seed_set = true; });
  app.add_option("--mode", config.mode, "closed-loop | single-solve | self-test")
    ->capture_default_str();
  app.add_option(
    "--from-summary", from_summary,
    "Re-run from the effective config echoed in a summary.json");
  app.add_flag("--dump-qp", config.dump_qp, "Dump the condensed QP (single-solve mode)");
  app.add_flag(
    "--strict-timing", config.strict_timing,
    "Fail (exit 5) when the cycle or feedback budget is exceeded");

  CLI11_PARSE(app, argc, argv);

  config.scenario_path = scenario;
  config.params_path = params;
  config.planner_path = planner;
  config.out_dir = out;
  config.from_summary = from_summary;
  if (seed_set) {
    config.seed = seed;
  }
  return unmpc::run(config);
}
