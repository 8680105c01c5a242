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

#include "unmpc/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace unmpc
{

void Scenario::validate() const
{
  if (!road) {
    throw std::invalid_argument("Scenario: missing road map");
  }
  if (duration <= 0.0) {
    throw std::invalid_argument("Scenario: duration must be positive");
  }
  if (plant.step <= 0.0 || plant.step > 1e-3 + 1e-12) {
    throw std::invalid_argument("Scenario: plant step must be positive and at most 1 ms");
  }
  if (
    plant.mass_factor <= 0.0 || plant.inertia_factor <= 0.0 || plant.grip_factor <= 0.0 ||
    plant.drag_factor <= 0.0) {
    throw std::invalid_argument("Scenario: perturbation factors must be positive");
  }
  if (commands.empty()) {
    throw std::invalid_argument("Scenario: need at least one command record");
  }
  for (std::size_t i = 1; i < commands.size(); ++i) {
    if (commands[i].time < commands[i - 1].time) {
      throw std::invalid_argument("Scenario: command activation times must be sorted");
    }
  }
}

VehicleParams perturb_params(const VehicleParams & nominal, const PlantSpec & plant)
{
  VehicleParams p = nominal;
  p.mass *= plant.mass_factor;
  p.yaw_inertia *= plant.inertia_factor;
  p.pacejka_d *= plant.grip_factor;
  p.drag_coeff *= plant.drag_factor;
  return p;
}

VehicleState step_plant(
  const VehicleState & state, const ControlRates & control, double h,
  const CurvatureFn & curvature, const VehicleParams & plant_params)
{
  if (h > 1e-3 + 1e-12) {
    throw std::invalid_argument("step_plant: step size above 1 ms");
  }
  const auto f = [&](const StateVec & v) {
    const VehicleState xs = VehicleState::from_vector(v);
    return dynamics(xs, control, curvature(xs.s), plant_params);
  };
  const StateVec v0 = state.to_vector();
  const StateVec k1 = f(v0);
  const StateVec k2 = f(v0 + 0.5 * h * k1);
  const StateVec k3 = f(v0 + 0.5 * h * k2);
  const StateVec k4 = f(v0 + h * k3);
  return VehicleState::from_vector(v0 + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
}

namespace
{

/// Truth-frame collision test between the ego body circles and one obstacle.
double circle_clearance(
  const VehicleState & ego, const Obstacle & obs, double t, const VehicleParams & params)
{
  const auto ego_circles = circle_centers(ego.s, ego.y, ego.xi, params.circle_offset);
  const auto [os, oy] = predict_obstacle(obs, t);
  const auto obs_circles = circle_centers(os, oy, obs.heading, obs.circle_offset);
  double best = 1e9;
  for (const auto & e : ego_circles) {
    for (const auto & o : obs_circles) {
      const double d = std::hypot(e.first - o.first, e.second - o.second);
      best = std::min(best, d - (params.body_radius + obs.radius));
    }
  }
  return best;
}

}  // namespace

SimLog run_closed_loop(
  const Scenario & scenario, const VehicleParams & params, const PlannerConfig & planner_config)
{
  scenario.validate();
  const RoadMap & road = *scenario.road;
  const VehicleParams plant_params = perturb_params(params, scenario.plant);
  const double s_lo = road.segments().front().s_start;
  const double s_hi = road.length();
  const CurvatureFn curv = [&road, s_lo, s_hi](double s) {
    return road.curvature_at(std::clamp(s, s_lo, s_hi));
  };

  Planner planner(params, road, planner_config);
  std::mt19937_64 rng(scenario.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double dt_cycle = planner_config.ocp.dt;
  const int steps_per_cycle = std::max(1, static_cast<int>(std::round(dt_cycle / scenario.plant.step)));
  const double h = dt_cycle / steps_per_cycle;
  const int cycles = static_cast<int>(std::ceil(scenario.duration / dt_cycle));

  SimLog log;
  VehicleState truth = scenario.ego;
  truth.t = 0.0;

  std::vector<bool> announced(scenario.obstacles.size(), false);
  bool emergency_before = false;

  const auto record_plant = [&](double t) {
    PlantRecord rec;
    rec.t = t;
    rec.state = truth;
    rec.pose = road.curvilinear_to_global(truth.s, truth.y, truth.xi);
    log.plant.push_back(rec);
  };
  record_plant(0.0);

  for (int cycle = 0; cycle < cycles; ++cycle) {
    const double t = cycle * dt_cycle;

    // Measurement (noise applies to every state except the clock).
    VehicleState measured = truth;
    measured.t = t;
    if (scenario.noise.enabled) {
      StateVec v = measured.to_vector();
      for (int i = 0; i < kNx; ++i) {
        if (i != kIdxTime && scenario.noise.stddev[i] > 0.0) {
          v[i] += scenario.noise.stddev[i] * gauss(rng);
        }
      }
      measured = VehicleState::from_vector(v);
    }

    // Obstacles the planner may see, advanced to the cycle start.
    std::vector<Obstacle> visible;
    for (std::size_t i = 0; i < scenario.obstacles.size(); ++i) {
      const ScenarioObstacle & so = scenario.obstacles[i];
      if (t + 1e-9 >= so.detect_time) {
        Obstacle obs = so.obstacle;
        const auto [os, oy] = predict_obstacle(so.obstacle, t);
        obs.s0 = os;
        obs.y0 = oy;
        obs.finalize_heading();
        visible.push_back(obs);
        if (!announced[i]) {
          announced[i] = true;
          log.events.push_back({t, "obstacle_detected", "obstacle " + std::to_string(i)});
        }
      }
    }

    // Active command record.
    BehaviouralCommand command = scenario.commands.front().command;
    for (const TimedCommand & tc : scenario.commands) {
      if (tc.time <= t + 1e-9) {
        command = tc.command;
      }
    }

    CycleRecord cyc;
    cyc.cycle = cycle;
    cyc.t = t;
    cyc.command = command;
    cyc.visible_obstacles = static_cast<int>(visible.size());
    cyc.output = planner.plan_cycle(measured, visible, command, scenario.perceived_horizon);
    if (cyc.output.emergency && !emergency_before) {
      log.events.push_back({t, "all_infeasible", "emergency braking engaged"});
    }
    emergency_before = cyc.output.emergency;
    log.cycles.push_back(cyc);
    if (cyc.output.emergency && !planner_config.emergency_policy) {
      log.exhausted = true;
      log.events.push_back({t, "planner_exhausted", "emergency policy disabled"});
      log.end_time = t;
      return log;
    }

    // Plant propagation under zero-order-hold rates, with truth-frame
    // collision and map-exit checks at every step.
    for (int k = 0; k < steps_per_cycle; ++k) {
      truth = step_plant(truth, cyc.output.control, h, curv, plant_params);
      truth.t = t + (k + 1) * h;
      const double tk = truth.t;
      record_plant(tk);

      for (std::size_t i = 0; i < scenario.obstacles.size(); ++i) {
        if (circle_clearance(truth, scenario.obstacles[i].obstacle, tk, params) <= 0.0) {
          log.collision = true;
          log.events.push_back({tk, "collision", "obstacle " + std::to_string(i)});
        }
      }
      const double margin = 2.0;  // beyond this the run left the mapped world
      const auto [left, right] = road.boundaries_at(std::clamp(truth.s, s_lo, s_hi));
      if (
        truth.s >= s_hi - 1e-6 || truth.s <= s_lo + 1e-9 || truth.y > left + margin ||
        truth.y < right - margin) {
        log.map_exit = true;
        log.events.push_back({tk, "map_exit", ""});
      }
      if (log.collision || log.map_exit) {
        log.end_time = tk;
        return log;
      }
    }
  }

  log.completed = true;
  log.end_time = log.plant.back().t;
  return log;
}

MarginsReport constraint_audit(
  const SimLog & log, const Scenario & scenario, const VehicleParams & params)
{
  MarginsReport rep;
  const RoadMap & road = *scenario.road;
  const double s_lo = road.segments().front().s_start;
  const double s_hi = road.length();

  for (const PlantRecord & rec : log.plant) {
    const VehicleState & x = rec.state;
    for (const ScenarioObstacle & so : scenario.obstacles) {
      rep.min_obstacle_clearance = std::min(
        rep.min_obstacle_clearance, circle_clearance(x, so.obstacle, rec.t, params));
    }

    const auto circles = circle_centers(x.s, x.y, x.xi, params.circle_offset);
    for (const auto & c : circles) {
      const auto [left, right] = road.boundaries_at(std::clamp(c.first, s_lo, s_hi));
      rep.min_left_margin = std::min(rep.min_left_margin, left - (c.second + params.body_radius));
      rep.min_right_margin =
        std::min(rep.min_right_margin, (c.second - params.body_radius) - right);
    }

    double vy_dot = 0.0;
    try {
      vy_dot = dynamics(
        x, ControlRates{}, road.curvature_at(std::clamp(x.s, s_lo, s_hi)), params)[kIdxVy];
    } catch (const std::domain_error &) {
    }
    const TorqueBounds ellipse = friction_ellipse_bounds(x, vy_dot, params);
    rep.min_torque_margin =
      std::min({rep.min_torque_margin, x.torque - ellipse.min, ellipse.max - x.torque});

    rep.peak_lateral_offset = std::max(rep.peak_lateral_offset, std::abs(x.y));
    rep.min_speed = std::min(rep.min_speed, x.vx);
    rep.max_speed = std::max(rep.max_speed, x.vx);
  }

  // Realized deceleration over a 50 ms window.
  const std::size_t window = 50;
  for (std::size_t i = window; i < log.plant.size(); ++i) {
    const double dv = log.plant[i].state.vx - log.plant[i - window].state.vx;
    const double dt = log.plant[i].t - log.plant[i - window].t;
    if (dt > 0.0) {
      rep.peak_decel = std::max(rep.peak_decel, -dv / dt);
    }
  }
  return rep;
}

}  // namespace unmpc
