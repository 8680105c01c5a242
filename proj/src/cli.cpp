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

#include "unmpc/cli.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <vector>

#include "unmpc/sqp_rti.hpp"

namespace unmpc
{

namespace
{

namespace fs = std::filesystem;

/// Full-precision decimal formatting for byte-reproducible CSV output.
std::string fmt(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double percentile(std::vector<double> values, double p)
{
  if (values.empty()) {
    return 0.0;
  }
  std::sort(values.begin(), values.end());
  const double idx = p * (values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(idx);
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (values[hi] - values[lo]) * (idx - lo);
}

const char * mode_name(DrivingMode m)
{
  return m == DrivingMode::kDrive ? "DRIVE" : "OVERTAKE";
}

Json margins_json(const MarginsReport & m)
{
  return Json{
    {"min_obstacle_clearance", m.min_obstacle_clearance},
    {"min_left_margin", m.min_left_margin},
    {"min_right_margin", m.min_right_margin},
    {"min_torque_margin", m.min_torque_margin},
    {"peak_decel", m.peak_decel},
    {"peak_lateral_offset", m.peak_lateral_offset},
    {"min_speed", m.min_speed},
    {"max_speed", m.max_speed}};
}

struct TimingStats
{
  double median_cycle_ms{0.0};
  double p90_cycle_ms{0.0};
  double max_cycle_ms{0.0};
  double median_leader_feedback_ms{0.0};
  double max_leader_feedback_ms{0.0};
};

TimingStats timing_stats(const SimLog & log)
{
  TimingStats st;
  std::vector<double> cycle_ms;
  std::vector<double> leader_fb_ms;
  for (const CycleRecord & c : log.cycles) {
    cycle_ms.push_back(c.output.cycle_seconds * 1e3);
    if (!c.output.diagnostics.empty()) {
      // Leader = longest horizon = role 'A' = index 0; per SQP iteration the
      // feedback phase is what must meet the per-sample budget.
      const SubPlannerDiag & lead = c.output.diagnostics.front();
      const int iters = std::max(1, lead.n_sqp);
      leader_fb_ms.push_back(lead.feedback_seconds * 1e3 / iters);
    }
  }
  st.median_cycle_ms = percentile(cycle_ms, 0.5);
  st.p90_cycle_ms = percentile(cycle_ms, 0.9);
  st.max_cycle_ms = percentile(cycle_ms, 1.0);
  st.median_leader_feedback_ms = percentile(leader_fb_ms, 0.5);
  st.max_leader_feedback_ms = percentile(leader_fb_ms, 1.0);
  return st;
}

}  // namespace

void write_run_csv(const SimLog & log, const Scenario &, const std::filesystem::path & path)
{
  std::ofstream os(path);
  os << "t,s,y,xi,Vx,Vy,omega,delta,Tr,X,Y,psi\n";
  for (const PlantRecord & r : log.plant) {
    os << fmt(r.t) << ',' << fmt(r.state.s) << ',' << fmt(r.state.y) << ',' << fmt(r.state.xi)
       << ',' << fmt(r.state.vx) << ',' << fmt(r.state.vy) << ',' << fmt(r.state.omega) << ','
       << fmt(r.state.delta) << ',' << fmt(r.state.torque) << ',' << fmt(r.pose.x) << ','
       << fmt(r.pose.y) << ',' << fmt(r.pose.psi) << '\n';
  }
}

void write_planner_jsonl(const SimLog & log, const std::filesystem::path & path)
{
  std::ofstream os(path);
  for (const CycleRecord & c : log.cycles) {
    Json j;
    j["cycle"] = c.cycle;
    j["t"] = c.t;
    j["selected"] = std::string(1, c.output.selected);
    j["emergency"] = c.output.emergency;
    j["mode"] = mode_name(c.command.mode);
    j["visible_obstacles"] = c.visible_obstacles;
    Json subs = Json::array();
    for (const SubPlannerDiag & d : c.output.diagnostics) {
      subs.push_back(Json{
        {"id", std::string(1, d.id)},
        {"horizon", d.horizon},
        {"feasible", d.feasible},
        {"status", to_string(d.qp_status)},
        {"kkt", d.kkt_residual},
        {"wsr", d.wsr},
        {"n_sqp", d.n_sqp}});
    }
    j["subs"] = subs;
    os << j.dump() << '\n';
  }
}

void write_perf_jsonl(const SimLog & log, const std::filesystem::path & path)
{
  std::ofstream os(path);
  for (const CycleRecord & c : log.cycles) {
    Json j;
    j["cycle"] = c.cycle;
    j["cycle_ms"] = c.output.cycle_seconds * 1e3;
    Json subs = Json::array();
    for (const SubPlannerDiag & d : c.output.diagnostics) {
      subs.push_back(Json{
        {"id", std::string(1, d.id)},
        {"prep_ms", d.prepare_seconds * 1e3},
        {"fb_ms", d.feedback_seconds * 1e3},
        {"total_ms", d.total_seconds * 1e3}});
    }
    j["subs"] = subs;
    os << j.dump() << '\n';
  }
}

void emit_plot_data(
  const SimLog & log, const Scenario & scenario, const std::filesystem::path & out_dir)
{
  fs::create_directories(out_dir);
  const RoadMap & road = *scenario.road;
  const double s_lo = road.segments().front().s_start;
  const double s_hi = road.length();
  const auto to_global = [&](double s, double y) {
    return road.curvilinear_to_global(std::clamp(s, s_lo, s_hi), y, 0.0);
  };

  {
    std::ofstream os(out_dir / "trajectory.csv");
    os << "t,ego_X,ego_Y";
    for (std::size_t i = 0; i < scenario.obstacles.size(); ++i) {
      os << ",obs" << i << "_X,obs" << i << "_Y";
    }
    os << '\n';
    for (const PlantRecord & r : log.plant) {
      os << fmt(r.t) << ',' << fmt(r.pose.x) << ',' << fmt(r.pose.y);
      for (const ScenarioObstacle & so : scenario.obstacles) {
        const auto [s, y] = predict_obstacle(so.obstacle, r.t);
        const GlobalPose g = to_global(s, y);
        os << ',' << fmt(g.x) << ',' << fmt(g.y);
      }
      os << '\n';
    }
  }

  {
    std::ofstream os(out_dir / "predictions.csv");
    os << "cycle,t,node,s,y,X,Y\n";
    for (const CycleRecord & c : log.cycles) {
      for (int k = 0; k < c.output.planned_x.rows(); ++k) {
        const double s = c.output.planned_x(k, kIdxS);
        const double y = c.output.planned_x(k, kIdxY);
        const GlobalPose g = to_global(s, y);
        os << c.cycle << ',' << fmt(c.t) << ',' << k << ',' << fmt(s) << ',' << fmt(y) << ','
           << fmt(g.x) << ',' << fmt(g.y) << '\n';
      }
    }
  }

  {
    std::ofstream os(out_dir / "states.csv");
    os << "t,s,y,xi,Vx,Vy,omega,delta,Tr\n";
    for (const PlantRecord & r : log.plant) {
      os << fmt(r.t) << ',' << fmt(r.state.s) << ',' << fmt(r.state.y) << ',' << fmt(r.state.xi)
         << ',' << fmt(r.state.vx) << ',' << fmt(r.state.vy) << ',' << fmt(r.state.omega) << ','
         << fmt(r.state.delta) << ',' << fmt(r.state.torque) << '\n';
    }
  }

  {
    std::ofstream os(out_dir / "inputs.csv");
    os << "t,steer_rate,torque_rate,selected\n";
    for (const CycleRecord & c : log.cycles) {
      os << fmt(c.t) << ',' << fmt(c.output.control.steer_rate) << ','
         << fmt(c.output.control.torque_rate) << ',' << c.output.selected << '\n';
    }
  }

  {
    std::ofstream os(out_dir / "cpu_time.csv");
    os << "t";
    const std::size_t n_subs =
      log.cycles.empty() ? 0 : log.cycles.front().output.diagnostics.size();
    for (std::size_t i = 0; i < n_subs; ++i) {
      os << ",sub" << static_cast<char>('A' + i) << "_ms";
    }
    os << ",total_ms\n";
    for (const CycleRecord & c : log.cycles) {
      os << fmt(c.t);
      for (const SubPlannerDiag & d : c.output.diagnostics) {
        os << ',' << fmt(d.total_seconds * 1e3);
      }
      os << ',' << fmt(c.output.cycle_seconds * 1e3) << '\n';
    }
  }
}

namespace
{

int run_closed_loop_mode(
  const RunConfig & config, const Scenario & scenario, const VehicleParams & params,
  const PlannerConfig & planner_config, const Json & effective)
{
  const SimLog log = run_closed_loop(scenario, params, planner_config);
  const MarginsReport margins = constraint_audit(log, scenario, params);
  const TimingStats timing = timing_stats(log);

  fs::create_directories(config.out_dir);
  write_run_csv(log, scenario, config.out_dir / "run.csv");
  write_planner_jsonl(log, config.out_dir / "planner.jsonl");
  write_perf_jsonl(log, config.out_dir / "perf.jsonl");
  emit_plot_data(log, scenario, config.out_dir / "plots");

  int exit_code = kExitOk;
  if (log.exhausted) {
    exit_code = kExitPlannerExhaustion;
  }
  if (log.collision) {
    exit_code = kExitCollision;
  }
  const bool budget_ok =
    timing.median_cycle_ms < 50.0 && timing.median_leader_feedback_ms < 10.0;
  if (config.strict_timing && exit_code == kExitOk && !budget_ok) {
    exit_code = kExitBudgetViolation;
  }

  int emergency_cycles = 0;
  Json selected_hist = Json::object();
  for (const CycleRecord & c : log.cycles) {
    if (c.output.emergency) {
      ++emergency_cycles;
    }
    const std::string key(1, c.output.selected);
    selected_hist[key] = selected_hist.value(key, 0) + 1;
  }

  Json events = Json::array();
  for (const SimEvent & e : log.events) {
    events.push_back(Json{{"t", e.t}, {"type", e.type}, {"detail", e.detail}});
  }

  // summary.json is part of the deterministic artifact set; wall-clock
  // figures live in perf.json instead.
  Json summary;
  summary["scenario"] = scenario.name;
  summary["seed"] = scenario.seed;
  summary["completed"] = log.completed;
  summary["collision"] = log.collision;
  summary["map_exit"] = log.map_exit;
  summary["planner_exhausted"] = log.exhausted;
  summary["end_time"] = log.end_time;
  summary["cycles"] = log.cycles.size();
  summary["emergency_cycles"] = emergency_cycles;
  summary["selected_histogram"] = selected_hist;
  summary["events"] = events;
  summary["margins"] = margins_json(margins);
  summary["exit_code"] = exit_code;
  summary["effective_config"] = effective;
  {
    std::ofstream os(config.out_dir / "summary.json");
    os << summary.dump(2) << '\n';
  }

  Json perf;
  perf["median_cycle_ms"] = timing.median_cycle_ms;
  perf["p90_cycle_ms"] = timing.p90_cycle_ms;
  perf["max_cycle_ms"] = timing.max_cycle_ms;
  perf["median_leader_feedback_ms"] = timing.median_leader_feedback_ms;
  perf["max_leader_feedback_ms"] = timing.max_leader_feedback_ms;
  perf["within_budget"] = budget_ok;
  {
    std::ofstream os(config.out_dir / "perf.json");
    os << perf.dump(2) << '\n';
  }

  std::cout << "scenario '" << scenario.name << "': "
            << (log.collision     ? "COLLISION"
                : log.exhausted   ? "PLANNER EXHAUSTED"
                : log.map_exit    ? "MAP EXIT"
                : log.completed   ? "completed"
                                  : "stopped")
            << " at t=" << log.end_time << " s, " << log.cycles.size() << " cycles, "
            << emergency_cycles << " emergency cycle(s)\n";
  std::cout << "  min obstacle clearance " << margins.min_obstacle_clearance
            << " m, peak decel " << margins.peak_decel << " m/s^2, median cycle "
            << timing.median_cycle_ms << " ms\n";
  return exit_code;
}

int run_single_solve(
  const RunConfig & config, const Scenario & scenario, const VehicleParams & params,
  const PlannerConfig & planner_config)
{
  const RoadMap & road = *scenario.road;
  VehicleState ego = scenario.ego;
  ego.t = 0.0;

  std::vector<Obstacle> visible;
  for (const ScenarioObstacle & so : scenario.obstacles) {
    if (so.detect_time <= 0.0) {
      Obstacle obs = so.obstacle;
      obs.finalize_heading();
      visible.push_back(obs);
    }
  }
  BehaviouralCommand command = scenario.commands.front().command;
  ModeSchedule schedule;
  schedule.set_target(command.mode);

  const OcpDefinition ocp = build_ocp(
    ego, road, visible, command, schedule, planner_config.ocp, params,
    ego.s + scenario.perceived_horizon);
  const VehicleOcpModel model(params, road, ocp);
  const TranscriptionProblem prob = model.problem();

  RtiEngine engine;
  ActiveSetSolver::Options opts;
  opts.max_wsr = planner_config.max_wsr;
  const ShootingIterate init =
    make_constant_iterate(ego.to_vector(), ocp.nodes, kNu, ocp.dt, kIdxTime);

  if (config.dump_qp) {
    const CondensedQp cqp = engine.prepare(init, prob);
    fs::create_directories(config.out_dir);
    std::ofstream os(config.out_dir / "qp_dump.txt");
    dump_qp(os, cqp.qp);
  }

  const SqpCycleResult res =
    engine.sqp_cycle(init, prob, ego.to_vector(), planner_config.leader_sqp, opts);

  fs::create_directories(config.out_dir);
  std::ofstream os(config.out_dir / "single_solve.csv");
  os << "node,s,y,xi,Vx,Vy,omega,delta,Tr,t,u_steer_rate,u_torque_rate\n";
  for (int k = 0; k <= ocp.nodes; ++k) {
    os << k;
    for (int c = 0; c < kNx; ++c) {
      os << ',' << fmt(res.iterate.x(k, c));
    }
    if (k < ocp.nodes) {
      os << ',' << fmt(res.iterate.u(k, 0)) << ',' << fmt(res.iterate.u(k, 1));
    } else {
      os << ",,";
    }
    os << '\n';
  }

  std::cout << "single solve: " << (res.ok ? "ok" : "failed") << ", "
            << res.iterations.size() << " SQP iteration(s)";
  if (!res.iterations.empty()) {
    std::cout << ", final KKT " << res.iterations.back().kkt_residual;
  }
  std::cout << '\n';
  return res.ok ? kExitOk : kExitPlannerExhaustion;
}

int run_self_test()
{
  int failures = 0;
  const auto report = [&](const char * name, bool pass) {
    std::cout << (pass ? "PASS  " : "FAIL  ") << name << '\n';
    if (!pass) {
      ++failures;
    }
  };

  VehicleParams params;

  {
    VehicleState standstill;
    standstill.vy = 1.0;
    standstill.omega = 0.4;
    const SlipAngles s = slip_angles_modified(standstill, params);
    report("modified slips vanish at standstill", s.front == 0.0 && s.rear == 0.0);
  }
  {
    const double f = lateral_force(0.02, params);
    const double g = lateral_force(-0.02, params);
    report("lateral force odd and bounded",
           std::abs(f + g) < 1e-12 && std::abs(f) <= 2.0 * params.pacejka_d);
  }
  {
    const auto f = [](const StateVec & v) { return StateVec(-v); };
    const StateVec x1 = implicit_midpoint_step(f, StateVec::Ones(), 0.1);
    report("implicit midpoint linear decay", std::abs(x1[0] - 0.95 / 1.05) < 1e-12);
  }
  {
    Eigen::MatrixXd a(1, 1), b(1, 1), q(1, 1), r(1, 1);
    a << 1.0;
    b << 1.0;
    q << 1.0;
    r << 1.0;
    const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
    report("scalar Riccati root", std::abs(dare(a, b, q, r)(0, 0) - golden) < 1e-12);
  }
  {
    DenseQp qp;
    qp.h = Eigen::Matrix2d::Identity();
    qp.g = Eigen::Vector2d(-1.0, -1.0);
    qp.lb = Eigen::Vector2d(-10.0, -10.0);
    qp.ub = Eigen::Vector2d(0.5, 2.0);
    qp.a.resize(0, 2);
    qp.lba.resize(0);
    qp.uba.resize(0);
    ActiveSetSolver solver;
    const QpSolution sol = solver.solve(qp, {});
    report(
      "active-set KKT point", sol.status == QpStatus::kOptimal &&
                                std::abs(sol.x[0] - 0.5) < 1e-9 &&
                                std::abs(sol.x[1] - 1.0) < 1e-9 && sol.kkt_residual < 1e-8);
  }
  {
    const RoadMap road = RoadMap::straight(100.0, 3.5, -3.5);
    const GlobalPose g = road.curvilinear_to_global(20.0, 1.0, 0.05);
    const CurvilinearPose c = road.global_to_curvilinear(g.x, g.y, g.psi);
    report(
      "road frame round trip",
      std::abs(c.s - 20.0) < 1e-6 && std::abs(c.y - 1.0) < 1e-6 && std::abs(c.xi - 0.05) < 1e-8);
  }
  {
    report("velocity profile hits zero at the horizon",
           velocity_profile_bound(20.0, 8.0, 20.0, 0.16) == 0.0);
  }

  std::cout << (failures == 0 ? "self-test: all checks passed\n"
                              : "self-test: FAILURES detected\n");
  return failures == 0 ? kExitOk : 1;
}

}  // namespace

int run(const RunConfig & config_in)
{
  RunConfig config = config_in;
  try {
    if (config.mode == "self-test") {
      return run_self_test();
    }

    Json params_json;
    Json planner_json;
    Json scenario_json;
    fs::path scenario_dir;

    if (!config.from_summary.empty()) {
      const Json summary = read_json_file(config.from_summary);
      const Json & eff = summary.at("effective_config");
      params_json = eff.at("params");
      planner_json = eff.at("planner");
      scenario_json = eff.at("scenario");
      scenario_dir = config.from_summary.parent_path();
    } else {
      if (config.scenario_path.empty() || config.params_path.empty()) {
        std::cerr << "error: --scenario and --params are required\n";
        return kExitConfigError;
      }
      params_json = read_json_file(config.params_path);
      scenario_json = read_json_file(config.scenario_path);
      planner_json = config.planner_path.empty() ? Json::object()
                                                 : read_json_file(config.planner_path);
      scenario_dir = config.scenario_path.parent_path();
    }

    const auto [params, limits] = load_vehicle_params(params_json);
    const PlannerConfig planner_config = load_planner_config(planner_json, limits);
    Scenario scenario = load_scenario(scenario_json, scenario_dir);
    if (config.seed) {
      scenario.seed = *config.seed;
      scenario_json["seed"] = *config.seed;
    }

    Json effective;
    effective["params"] = params_json;
    effective["planner"] = planner_json;
    effective["scenario"] = scenario_json;

    if (config.mode == "closed-loop") {
      return run_closed_loop_mode(config, scenario, params, planner_config, effective);
    }
    if (config.mode == "single-solve") {
      return run_single_solve(config, scenario, params, planner_config);
    }
    std::cerr << "error: unknown mode '" << config.mode << "'\n";
    return kExitConfigError;
  } catch (const std::exception & e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfigError;
  }
}

}  // namespace unmpc
