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

#include "unmpc/ocp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace unmpc
{

void ModeSchedule::advance(double dt, double blend_time)
{
  const double step = dt / std::max(blend_time, 1e-6);
  const double goal = (target == DrivingMode::kOvertake) ? 1.0 : 0.0;
  if (lambda < goal) {
    lambda = std::min(goal, lambda + step);
  } else if (lambda > goal) {
    lambda = std::max(goal, lambda - step);
  }
}

double normalize_state_weight(double span)
{
  if (span <= 0.0) {
    throw std::invalid_argument("normalize_state_weight: span must be positive");
  }
  return 1.0 / (span * span);
}

Eigen::VectorXd weights_from_spans(const Eigen::VectorXd & spans)
{
  Eigen::VectorXd w = Eigen::VectorXd::Zero(spans.size());
  for (Eigen::Index i = 0; i < spans.size(); ++i) {
    w[i] = spans[i] > 0.0 ? normalize_state_weight(spans[i]) : 0.0;
  }
  return w;
}

Eigen::MatrixXd dare(
  const Eigen::MatrixXd & a, const Eigen::MatrixXd & b, const Eigen::MatrixXd & q,
  const Eigen::MatrixXd & r)
{
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd ak = a;
  Eigen::MatrixXd gk = b * r.ldlt().solve(b.transpose());
  Eigen::MatrixXd hk = q;

  bool converged = false;
  for (int it = 0; it < 100; ++it) {
    const Eigen::MatrixXd w = Eigen::MatrixXd::Identity(n, n) + gk * hk;
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(w);
    const Eigen::MatrixXd wa = lu.solve(ak);
    const Eigen::MatrixXd wg = lu.solve(gk);
    const Eigen::MatrixXd h_next = hk + ak.transpose() * hk * wa;
    const Eigen::MatrixXd g_next = gk + ak * wg * ak.transpose();
    const Eigen::MatrixXd a_next = ak * wa;
    const double dh = (h_next - hk).norm();
    hk = 0.5 * (h_next + h_next.transpose());
    gk = g_next;
    ak = a_next;
    if (dh <= 1e-14 * std::max(1.0, hk.norm())) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw std::runtime_error("dare: doubling iteration did not converge");
  }

  // Residual gate on the fixed-point equation.
  const Eigen::MatrixXd btp = b.transpose() * hk;
  const Eigen::MatrixXd gain_den = r + btp * b;
  const Eigen::MatrixXd residual =
    a.transpose() * hk * a - hk - a.transpose() * btp.transpose() * gain_den.ldlt().solve(btp * a) +
    q;
  if (residual.norm() > 1e-8 * std::max(1.0, hk.norm())) {
    throw std::runtime_error("dare: residual too large (bad linearization point?)");
  }
  return hk;
}

namespace
{

/// Straight-line cruise equilibrium at v_ref: torque balances drag exactly.
VehicleState cruise_state(const VehicleParams & params, double v_ref)
{
  VehicleState x;
  x.vx = v_ref;
  x.torque = params.wheel_radius * params.drag_coeff * v_ref * std::abs(v_ref);
  return x;
}

}  // namespace

Eigen::Matrix<double, kNx, kNx> terminal_weight(
  const VehicleParams & params, double v_ref, const Eigen::VectorXd & q_state,
  const Eigen::Vector2d & r, double dt)
{
  if (q_state.size() != kNx) {
    throw std::invalid_argument("terminal_weight: q_state must have kNx entries");
  }
  const VehicleState lin = cruise_state(params, v_ref);
  StateMat a;
  InputMat b;
  sensitivities(lin, ControlRates{}, dt, [](double) { return 0.0; }, params, a, b);

  const Eigen::MatrixXd p =
    dare(a, b, Eigen::MatrixXd(q_state.asDiagonal()) * dt, Eigen::MatrixXd(r.asDiagonal()) * dt);
  return p;
}

VelocityProfile make_velocity_profile(const OcpConfig & config, double v_ref, double s_zero)
{
  VelocityProfile vel;
  vel.v_ref = config.profile_headroom * v_ref;
  vel.s_max = s_zero;
  // Peak deceleration of v(s) = v_p tanh(k (s_max - s)) is
  // max_s |v v'| = k v_p^2 * 2/(3 sqrt(3)).
  const double v2 = std::max(vel.v_ref * vel.v_ref, 1.0);
  vel.kappa_vel = config.comfort_decel / (0.3849 * v2);
  return vel;
}

double profile_stop_distance(const OcpConfig & config, double v_ref, double vx)
{
  const VelocityProfile vel = make_velocity_profile(config, v_ref, 0.0);
  const double ratio = std::clamp(std::abs(vx) / vel.v_ref, 0.0, 0.999);
  return std::atanh(ratio) / vel.kappa_vel + std::abs(vx) * config.dt + 1.0;
}

WeightSet blend_modes(const WeightSet & drive, const WeightSet & overtake, double lambda)
{
  if (lambda < 0.0 || lambda > 1.0) {
    throw std::invalid_argument("blend_modes: lambda outside [0, 1]");
  }
  WeightSet out;
  out.q = (1.0 - lambda) * drive.q + lambda * overtake.q;
  out.r = (1.0 - lambda) * drive.r + lambda * overtake.r;
  out.p = (1.0 - lambda) * drive.p + lambda * overtake.p;
  return out;
}

WeightSet mode_weight_set(
  const ModeWeights & table, int n_obstacles, const VehicleParams & params, double v_ref,
  double dt)
{
  const int n_soft = soft_channel_count(n_obstacles);
  WeightSet ws;
  ws.q = Eigen::VectorXd::Zero(kNx + n_soft);
  Eigen::VectorXd spans(kNx);
  for (int i = 0; i < kNx; ++i) {
    spans[i] = table.state_span[i];
  }
  ws.q.head(kNx) = weights_from_spans(spans);
  int idx = kNx;
  for (int o = 0; o < n_obstacles; ++o) {
    for (int c = 0; c < 4; ++c) {
      ws.q[idx++] = table.obstacle_weight;
    }
    ws.q[idx++] = table.ellipse_weight;
  }
  for (int c = 0; c < 4; ++c) {
    ws.q[idx++] = table.boundary_weight;
  }
  ws.r[0] = normalize_state_weight(table.steer_rate_span);
  ws.r[1] = normalize_state_weight(table.torque_rate_span);
  ws.p = terminal_weight(params, v_ref, ws.q.head(kNx), ws.r, dt);
  return ws;
}

namespace
{

/// Keep the n nearest obstacles by predicted minimum distance to a
/// constant-velocity ego prediction; pad with far-away dummies.
std::vector<Obstacle> select_obstacles(
  const std::vector<Obstacle> & visible, const VehicleState & ego, int n, int nodes, double dt)
{
  std::vector<std::pair<double, int>> ranked;
  ranked.reserve(visible.size());
  for (int j = 0; j < static_cast<int>(visible.size()); ++j) {
    double best = std::numeric_limits<double>::max();
    for (int k = 0; k <= nodes; ++k) {
      const double tau = k * dt;
      const auto [os, oy] = predict_obstacle(visible[j], tau);
      const double es = ego.s + ego.vx * tau;
      best = std::min(best, std::hypot(os - es, oy - ego.y));
    }
    ranked.emplace_back(best, j);
  }
  std::sort(ranked.begin(), ranked.end());

  std::vector<Obstacle> out;
  out.reserve(n);
  for (int i = 0; i < n && i < static_cast<int>(ranked.size()); ++i) {
    out.push_back(visible[ranked[i].second]);
  }
  while (static_cast<int>(out.size()) < n) {
    Obstacle dummy;
    dummy.s0 = ego.s + 1e6;  // exponentially invisible to every penalty
    dummy.y0 = 0.0;
    out.push_back(dummy);
  }
  return out;
}

}  // namespace

OcpDefinition build_ocp(
  const VehicleState & estimate, const RoadMap & road, const std::vector<Obstacle> & visible,
  const BehaviouralCommand & command, const ModeSchedule & schedule, const OcpConfig & config,
  const VehicleParams & params, double horizon_end)
{
  OcpDefinition ocp;
  ocp.nodes = config.nodes;
  ocp.dt = config.dt;
  ocp.cycle_start_time = estimate.t;
  ocp.limits = config.limits;
  if (
    ocp.limits.delta_min > ocp.limits.delta_max || ocp.limits.torque_min > ocp.limits.torque_max ||
    ocp.limits.steer_rate_min > ocp.limits.steer_rate_max ||
    ocp.limits.torque_rate_min > ocp.limits.torque_rate_max) {
    throw std::invalid_argument("build_ocp: bound limits inverted");
  }

  const WeightSet drive_ws =
    mode_weight_set(config.drive, config.n_obstacles, params, command.v_ref, config.dt);
  const WeightSet overtake_ws =
    mode_weight_set(config.overtake, config.n_obstacles, params, command.v_ref, config.dt);
  ocp.weights = blend_modes(drive_ws, overtake_ws, schedule.lambda);

  ocp.soft_cfg.kappa_pen = config.kappa_pen;
  ocp.soft_cfg.ds = command.ellipse_ds;
  ocp.soft_cfg.dy = command.ellipse_dy;

  ocp.obstacles = select_obstacles(visible, estimate, config.n_obstacles, config.nodes, config.dt);
  for (Obstacle & obs : ocp.obstacles) {
    // Constraint-side standoff: the plant-truth geometry keeps the scripted
    // radius, so a plan riding the hard constraint still clears it.
    obs.radius += config.obstacle_margin;
  }

  // Velocity profile: zero speed no later than the simulated horizon end or
  // the commanded stop point.
  double s_zero = horizon_end;
  if (command.s_stop) {
    s_zero = std::min(s_zero, *command.s_stop);
  }
  ocp.vel = make_velocity_profile(config, command.v_ref, s_zero);

  // The mapped region must cover the reachable s-range.
  const double reach = estimate.s + std::max(command.v_ref, estimate.vx) * config.nodes * config.dt;
  if (reach > road.length() + 1e-9) {
    throw std::out_of_range("build_ocp: road map shorter than the reachable horizon");
  }

  // References: the speed reference follows the desired profile (strictly
  // inside the hard bound, so the tracking cost never pins the constraint)
  // and the s reference is its time integral.
  const int nh = ocp.n_h();
  ocp.h_ref = Eigen::MatrixXd::Zero(config.nodes + 1, nh);
  double s_pred = estimate.s;
  for (int k = 0; k <= config.nodes; ++k) {
    const double bound =
      velocity_profile_bound(s_pred, ocp.vel.v_ref, ocp.vel.s_max, ocp.vel.kappa_vel);
    const double vx_ref = std::min(command.v_ref, 0.97 * bound);
    ocp.h_ref(k, kIdxS) = s_pred;
    ocp.h_ref(k, kIdxY) = command.y_ref;
    ocp.h_ref(k, kIdxVx) = vx_ref;
    ocp.h_ref(k, kIdxTime) = estimate.t + k * config.dt;
    s_pred += vx_ref * config.dt;
  }
  return ocp;
}

}  // namespace unmpc
