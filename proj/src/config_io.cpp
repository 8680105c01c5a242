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

#include "unmpc/config_io.hpp"

#include <fstream>
#include <stdexcept>

namespace unmpc
{

namespace
{

double num(const Json & j, const char * key, double fallback)
{
  return j.contains(key) ? j.at(key).get<double>() : fallback;
}

double num_req(const Json & j, const char * key, const char * ctx)
{
  if (!j.contains(key)) {
    throw std::invalid_argument(std::string(ctx) + ": missing field '" + key + "'");
  }
  return j.at(key).get<double>();
}

}  // namespace

Json read_json_file(const std::filesystem::path & path)
{
  std::ifstream in(path);
  if (!in) {
    throw std::invalid_argument("cannot open " + path.string());
  }
  Json j;
  in >> j;
  return j;
}

std::pair<VehicleParams, VehicleLimits> load_vehicle_params(const Json & j)
{
  VehicleParams p;
  p.mass = num_req(j, "mass", "vehicle params");
  p.yaw_inertia = num_req(j, "yaw_inertia", "vehicle params");
  p.lf = num_req(j, "lf", "vehicle params");
  p.lr = num_req(j, "lr", "vehicle params");
  p.wheel_radius = num_req(j, "wheel_radius", "vehicle params");
  const Json & pac = j.at("pacejka");
  p.pacejka_b = num_req(pac, "B", "pacejka");
  p.pacejka_c = num_req(pac, "C", "pacejka");
  p.pacejka_d = num_req(pac, "D", "pacejka");
  p.pacejka_e = num_req(pac, "E", "pacejka");
  p.drag_coeff = num(j, "drag_coeff", p.drag_coeff);
  if (j.contains("ellipse")) {
    const Json & e = j.at("ellipse");
    p.ellipse_a1 = num(e, "a1", p.ellipse_a1);
    p.ellipse_a2 = num(e, "a2", p.ellipse_a2);
    p.ellipse_b1 = num(e, "b1", p.ellipse_b1);
    p.ellipse_b2 = num(e, "b2", p.ellipse_b2);
  }
  if (j.contains("slip")) {
    p.kappa_slip = num(j.at("slip"), "kappa", p.kappa_slip);
    p.slip_eps0 = num(j.at("slip"), "eps0", p.slip_eps0);
  }
  if (j.contains("body")) {
    p.body_radius = num(j.at("body"), "radius", p.body_radius);
    p.circle_offset = num(j.at("body"), "circle_offset", p.circle_offset);
  }
  p.validate();

  VehicleLimits lim;
  if (j.contains("limits")) {
    const Json & l = j.at("limits");
    lim.delta_min = num(l, "delta_min", lim.delta_min);
    lim.delta_max = num(l, "delta_max", lim.delta_max);
    lim.torque_min = num(l, "torque_min", lim.torque_min);
    lim.torque_max = num(l, "torque_max", lim.torque_max);
    lim.steer_rate_min = num(l, "steer_rate_min", lim.steer_rate_min);
    lim.steer_rate_max = num(l, "steer_rate_max", lim.steer_rate_max);
    lim.torque_rate_min = num(l, "torque_rate_min", lim.torque_rate_min);
    lim.torque_rate_max = num(l, "torque_rate_max", lim.torque_rate_max);
  }
  return {p, lim};
}

Json to_json(const VehicleParams & p, const VehicleLimits & lim)
{
  Json j;
  j["mass"] = p.mass;
  j["yaw_inertia"] = p.yaw_inertia;
  j["lf"] = p.lf;
  j["lr"] = p.lr;
  j["wheel_radius"] = p.wheel_radius;
  j["pacejka"] = {{"B", p.pacejka_b}, {"C", p.pacejka_c}, {"D", p.pacejka_d}, {"E", p.pacejka_e}};
  j["drag_coeff"] = p.drag_coeff;
  j["ellipse"] = {
    {"a1", p.ellipse_a1}, {"a2", p.ellipse_a2}, {"b1", p.ellipse_b1}, {"b2", p.ellipse_b2}};
  j["slip"] = {{"kappa", p.kappa_slip}, {"eps0", p.slip_eps0}};
  j["body"] = {{"radius", p.body_radius}, {"circle_offset", p.circle_offset}};
  j["limits"] = {
    {"delta_min", lim.delta_min},           {"delta_max", lim.delta_max},
    {"torque_min", lim.torque_min},         {"torque_max", lim.torque_max},
    {"steer_rate_min", lim.steer_rate_min}, {"steer_rate_max", lim.steer_rate_max},
    {"torque_rate_min", lim.torque_rate_min}, {"torque_rate_max", lim.torque_rate_max}};
  return j;
}

RoadMap load_road(const Json & j)
{
  if (j.contains("segments")) {
    std::vector<CentrelineSegment> segments;
    std::vector<BoundarySegment> boundaries;
    for (const Json & js : j.at("segments")) {
      CentrelineSegment seg;
      seg.s_start = num_req(js, "s_start", "road segment");
      seg.s_end = num_req(js, "s_end", "road segment");
      const auto theta = js.at("theta").get<std::vector<double>>();
      const auto left = js.at("left").get<std::vector<double>>();
      const auto right = js.at("right").get<std::vector<double>>();
      if (theta.size() != 4 || left.size() != 4 || right.size() != 4) {
        throw std::invalid_argument("road segment: theta/left/right need 4 coefficients");
      }
      std::copy(theta.begin(), theta.end(), seg.theta.begin());
      if (js.contains("anchor")) {
        seg.anchor_x = js.at("anchor").at(0).get<double>();
        seg.anchor_y = js.at("anchor").at(1).get<double>();
      }
      BoundarySegment bnd;
      std::copy(left.begin(), left.end(), bnd.left.begin());
      std::copy(right.begin(), right.end(), bnd.right.begin());
      segments.push_back(seg);
      boundaries.push_back(bnd);
    }
    return RoadMap(std::move(segments), std::move(boundaries));
  }
  if (j.contains("polyline")) {
    const Json & poly = j.at("polyline");
    std::vector<std::pair<double, double>> points;
    for (const Json & pt : poly.at("points")) {
      points.emplace_back(pt.at(0).get<double>(), pt.at(1).get<double>());
    }
    const auto widths = [&](const char * key) {
      std::vector<double> w;
      const Json & jw = poly.at(key);
      if (jw.is_number()) {
        w.assign(points.size(), jw.get<double>());
      } else {
        w = jw.get<std::vector<double>>();
      }
      return w;
    };
    return RoadMap::fit_from_polyline(points, widths("left_width"), widths("right_width"));
  }
  throw std::invalid_argument("road: need either 'segments' or 'polyline'");
}

namespace
{

BehaviouralCommand load_command(const Json & j)
{
  BehaviouralCommand cmd;
  const std::string mode = j.value("mode", "DRIVE");
  if (mode == "DRIVE") {
    cmd.mode = DrivingMode::kDrive;
  } else if (mode == "OVERTAKE") {
    cmd.mode = DrivingMode::kOvertake;
  } else {
    throw std::invalid_argument("command: unknown mode '" + mode + "'");
  }
  cmd.v_ref = num_req(j, "v_ref", "command");
  cmd.y_ref = num(j, "y_ref", 0.0);
  if (j.contains("s_stop")) {
    cmd.s_stop = j.at("s_stop").get<double>();
  }
  cmd.ellipse_ds = num(j, "ellipse_ds", cmd.ellipse_ds);
  cmd.ellipse_dy = num(j, "ellipse_dy", cmd.ellipse_dy);
  return cmd;
}

}  // namespace

Scenario load_scenario(const Json & j, const std::filesystem::path & base_dir)
{
  Scenario sc;
  sc.name = j.value("name", "scenario");

  const Json & jroad = j.at("road");
  if (jroad.contains("file")) {
    sc.road = std::make_shared<RoadMap>(
      load_road(read_json_file(base_dir / jroad.at("file").get<std::string>())));
  } else {
    sc.road = std::make_shared<RoadMap>(load_road(jroad));
  }

  const Json & je = j.at("ego");
  sc.ego.s = num(je, "s", 0.0);
  sc.ego.y = num(je, "y", 0.0);
  sc.ego.xi = num(je, "xi", 0.0);
  sc.ego.vx = num(je, "vx", 0.0);
  sc.ego.vy = num(je, "vy", 0.0);
  sc.ego.omega = num(je, "omega", 0.0);
  sc.ego.delta = num(je, "delta", 0.0);
  sc.ego.torque = num(je, "torque", 0.0);

  if (j.contains("obstacles")) {
    for (const Json & jo : j.at("obstacles")) {
      ScenarioObstacle so;
      so.obstacle.s0 = num_req(jo, "s0", "obstacle");
      so.obstacle.y0 = num(jo, "y0", 0.0);
      so.obstacle.vs = num(jo, "vs", 0.0);
      so.obstacle.vy = num(jo, "vy", 0.0);
      so.obstacle.radius = num(jo, "radius", so.obstacle.radius);
      so.obstacle.circle_offset = num(jo, "circle_offset", so.obstacle.circle_offset);
      so.obstacle.heading = num(jo, "heading", 0.0);
      so.obstacle.ds_decay = num(jo, "ds_decay", 0.0);
      so.obstacle.dy_decay = num(jo, "dy_decay", 0.0);
      so.obstacle.finalize_heading();
      so.detect_time = num(jo, "detect_time", 0.0);
      sc.obstacles.push_back(so);
    }
  }

  for (const Json & jc : j.at("commands")) {
    TimedCommand tc;
    tc.time = num(jc, "time", 0.0);
    tc.command = load_command(jc);
    sc.commands.push_back(tc);
  }

  sc.perceived_horizon = num_req(j, "perceived_horizon", "scenario");
  sc.duration = num_req(j, "duration", "scenario");
  if (j.contains("plant")) {
    const Json & jp = j.at("plant");
    sc.plant.step = num(jp, "step", sc.plant.step);
    sc.plant.mass_factor = num(jp, "mass_factor", 1.0);
    sc.plant.inertia_factor = num(jp, "inertia_factor", 1.0);
    sc.plant.grip_factor = num(jp, "grip_factor", 1.0);
    sc.plant.drag_factor = num(jp, "drag_factor", 1.0);
  }
  if (j.contains("noise")) {
    const Json & jn = j.at("noise");
    sc.noise.enabled = jn.value("enabled", false);
    if (jn.contains("std")) {
      const Json & js = jn.at("std");
      const char * names[kNx] = {"s", "y", "xi", "vx", "vy", "omega", "delta", "torque", "t"};
      for (int i = 0; i < kNx; ++i) {
        sc.noise.stddev[i] = num(js, names[i], 0.0);
      }
    }
  }
  sc.seed = j.value("seed", 0ULL);
  sc.validate();
  return sc;
}

namespace
{

ModeWeights load_mode_weights(const Json & j, const ModeWeights & fallback)
{
  ModeWeights w = fallback;
  if (j.contains("spans")) {
    const Json & js = j.at("spans");
    const char * names[kNx] = {"s", "y", "xi", "vx", "vy", "omega", "delta", "torque", "t"};
    for (int i = 0; i < kNx; ++i) {
      w.state_span[i] = num(js, names[i], w.state_span[i]);
    }
  }
  if (j.contains("rate_spans")) {
    w.steer_rate_span = num(j.at("rate_spans"), "steer", w.steer_rate_span);
    w.torque_rate_span = num(j.at("rate_spans"), "torque", w.torque_rate_span);
  }
  if (j.contains("weights")) {
    const Json & jw = j.at("weights");
    w.obstacle_weight = num(jw, "obstacle", w.obstacle_weight);
    w.ellipse_weight = num(jw, "ellipse", w.ellipse_weight);
    w.boundary_weight = num(jw, "boundary", w.boundary_weight);
  }
  return w;
}

}  // namespace

PlannerConfig load_planner_config(const Json & j, const VehicleLimits & limits)
{
  PlannerConfig cfg;
  cfg.sub_planner_count = static_cast<int>(num(j, "sub_planners", cfg.sub_planner_count));
  cfg.mid_horizon_ratio = num(j, "mid_horizon_ratio", cfg.mid_horizon_ratio);
  cfg.comfort_decel = num(j, "comfort_decel", cfg.comfort_decel);
  cfg.leader_sqp = static_cast<int>(num(j, "leader_sqp", cfg.leader_sqp));
  cfg.follower_sqp = static_cast<int>(num(j, "follower_sqp", cfg.follower_sqp));
  cfg.max_wsr = static_cast<int>(num(j, "max_wsr", cfg.max_wsr));
  if (j.contains("qp_budget_ms") && !j.at("qp_budget_ms").is_null()) {
    cfg.qp_budget_seconds = j.at("qp_budget_ms").get<double>() * 1e-3;
  }
  cfg.horizon_growth_factor = num(j, "horizon_growth_factor", cfg.horizon_growth_factor);
  cfg.parallel = j.value("parallel", cfg.parallel);
  cfg.emergency_policy = j.value("emergency_policy", cfg.emergency_policy);

  if (j.contains("horizon")) {
    cfg.ocp.nodes = static_cast<int>(num(j.at("horizon"), "nodes", cfg.ocp.nodes));
    cfg.ocp.dt = num(j.at("horizon"), "dt", cfg.ocp.dt);
  }
  cfg.ocp.n_obstacles = static_cast<int>(num(j, "n_obstacles", cfg.ocp.n_obstacles));
  cfg.ocp.kappa_pen = num(j, "kappa_pen", cfg.ocp.kappa_pen);
  cfg.ocp.obstacle_margin = num(j, "obstacle_margin", cfg.ocp.obstacle_margin);
  cfg.ocp.comfort_decel = cfg.comfort_decel;
  cfg.ocp.blend_time = num(j, "blend_time", cfg.ocp.blend_time);
  cfg.ocp.limits = limits;
  if (j.contains("modes")) {
    const Json & jm = j.at("modes");
    if (jm.contains("drive")) {
      cfg.ocp.drive = load_mode_weights(jm.at("drive"), cfg.ocp.drive);
    }
    if (jm.contains("overtake")) {
      cfg.ocp.overtake = load_mode_weights(jm.at("overtake"), cfg.ocp.overtake);
    }
  }
  return cfg;
}

}  // namespace unmpc
