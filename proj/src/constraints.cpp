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

#include "unmpc/constraints.hpp"

#include <cmath>
#include <stdexcept>

namespace unmpc
{

namespace
{

constexpr double kExpClamp = 30.0;

double clamped_exp(double exponent) { return std::exp(std::min(exponent, kExpClamp)); }

}  // namespace

void Obstacle::finalize_heading()
{
  if (std::abs(vs) > 1e-9 || std::abs(vy) > 1e-9) {
    heading = std::atan2(vy, vs);
  }
}

std::pair<double, double> predict_obstacle(const Obstacle & obs, double t)
{
  return {obs.s0 + obs.vs * t, obs.y0 + obs.vy * t};
}

std::array<std::pair<double, double>, 2> circle_centers(
  double s, double y, double angle, double offset)
{
  const double ds = offset * std::cos(angle);
  const double dy = offset * std::sin(angle);
  return {{{s + ds, y + dy}, {s - ds, y - dy}}};
}

std::array<double, 4> obstacle_hard_residuals(
  const std::array<std::pair<double, double>, 2> & ego_circles,
  const std::array<std::pair<double, double>, 2> & obs_circles, double rho_ego, double rho_obs)
{
  const double r_sum = rho_ego + rho_obs;
  std::array<double, 4> out{};
  int k = 0;
  for (const auto & e : ego_circles) {
    for (const auto & o : obs_circles) {
      const double ds = e.first - o.first;
      const double dy = e.second - o.second;
      out[k++] = r_sum * r_sum - ds * ds - dy * dy;
    }
  }
  return out;
}

std::array<double, 4> obstacle_soft_penalties(
  const std::array<std::pair<double, double>, 2> & ego_circles,
  const std::array<std::pair<double, double>, 2> & obs_circles, double rho_ego, double rho_obs,
  double kappa_pen)
{
  if (kappa_pen <= 0.0) {
    throw std::invalid_argument("obstacle_soft_penalties: kappa_pen must be positive");
  }
  const auto hard = obstacle_hard_residuals(ego_circles, obs_circles, rho_ego, rho_obs);
  std::array<double, 4> out{};
  for (int k = 0; k < 4; ++k) {
    out[k] = clamped_exp(kappa_pen * hard[k]);
  }
  return out;
}

double safety_ellipse_penalty(
  double ego_s, double ego_y, double obs_s, double obs_y, double ds, double dy, double kappa_pen)
{
  if (ds <= 0.0 || dy <= 0.0) {
    throw std::invalid_argument("safety_ellipse_penalty: ds and dy must be positive");
  }
  const double es = ego_s - obs_s;
  const double ey = ego_y - obs_y;
  return clamped_exp(kappa_pen * (-ds * es * es - dy * ey * ey));
}

BoundaryEval boundary_residuals(
  const std::array<std::pair<double, double>, 2> & ego_circles, double rho_ego,
  const RoadMap & road, double kappa_pen)
{
  BoundaryEval out{};
  int k = 0;
  for (const auto & c : ego_circles) {
    const auto [left, right] = road.boundaries_at(c.first);
    out.hard[k] = rho_ego + (c.second - left);
    out.hard[k + 1] = rho_ego - (c.second - right);
    out.soft[k] = clamped_exp(kappa_pen * out.hard[k]);
    out.soft[k + 1] = clamped_exp(kappa_pen * out.hard[k + 1]);
    k += 2;
  }
  return out;
}

double velocity_profile_bound(double s, double v_ref, double s_max, double kappa_vel)
{
  if (kappa_vel <= 0.0) {
    throw std::invalid_argument("velocity_profile_bound: kappa_vel must be positive");
  }
  return v_ref * std::max(0.0, std::tanh(kappa_vel * (s_max - s)));
}

NodeConstraintEval evaluate_node_constraints(
  const VehicleState & x, const RoadMap & road, const std::vector<Obstacle> & obstacles,
  const SoftPenaltyConfig & soft_cfg, double cycle_start_time, const VelocityProfile & vel,
  const VehicleParams & params)
{
  const int n_obs = static_cast<int>(obstacles.size());
  const int n_hard = hard_constraint_count(n_obs);
  const int n_soft = soft_channel_count(n_obs);

  NodeConstraintEval out;
  out.hard = Eigen::VectorXd::Zero(n_hard);
  out.hard_jac = Eigen::MatrixXd::Zero(n_hard, kNx);
  out.soft = Eigen::VectorXd::Zero(n_soft);
  out.soft_jac = Eigen::MatrixXd::Zero(n_soft, kNx);

  const double kappa = soft_cfg.kappa_pen;
  const double tau = x.t - cycle_start_time;
  const double cos_xi = std::cos(x.xi);
  const double sin_xi = std::sin(x.xi);
  const double d_ego = params.circle_offset;
  const auto ego = circle_centers(x.s, x.y, x.xi, d_ego);

  // d(center)/d(s, y, xi) for the +offset and -offset ego circles.
  const std::array<double, 2> sign = {1.0, -1.0};

  int ih = 0;
  int is = 0;
  for (const Obstacle & obs : obstacles) {
    const auto [os, oy] = predict_obstacle(obs, tau);
    const auto obs_circles = circle_centers(os, oy, obs.heading, obs.circle_offset);
    const double r_sum = params.body_radius + obs.radius;

    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) {
        const double dss = ego[i].first - obs_circles[j].first;
        const double dyy = ego[i].second - obs_circles[j].second;
        const double resid = r_sum * r_sum - dss * dss - dyy * dyy;

        Eigen::RowVector<double, kNx> grad = Eigen::RowVector<double, kNx>::Zero();
        grad[kIdxS] = -2.0 * dss;
        grad[kIdxY] = -2.0 * dyy;
        grad[kIdxXi] =
          -2.0 * dss * (sign[i] * -d_ego * sin_xi) - 2.0 * dyy * (sign[i] * d_ego * cos_xi);
        grad[kIdxTime] = 2.0 * dss * obs.vs + 2.0 * dyy * obs.vy;

        out.hard[ih] = resid;
        out.hard_jac.row(ih) = grad;
        ++ih;

        const double expo = kappa * resid;
        const double c = clamped_exp(expo);
        out.soft[is] = c;
        out.soft_jac.row(is) = (expo < kExpClamp) ? (kappa * c * grad).eval()
                                                  : Eigen::RowVector<double, kNx>::Zero().eval();
        ++is;
      }
    }

    // Safety ellipse on the C.o.M. pair, with linearly decaying weights.
    const double ds_eff = std::max(soft_cfg.ds - obs.ds_decay * tau, 0.01 * soft_cfg.ds);
    const double dy_eff = std::max(soft_cfg.dy - obs.dy_decay * tau, 0.01 * soft_cfg.dy);
    const bool ds_floored = soft_cfg.ds - obs.ds_decay * tau < 0.01 * soft_cfg.ds;
    const bool dy_floored = soft_cfg.dy - obs.dy_decay * tau < 0.01 * soft_cfg.dy;
    const double es = x.s - os;
    const double ey = x.y - oy;
    const double expo = kappa * (-ds_eff * es * es - dy_eff * ey * ey);
    const double c = clamped_exp(expo);
    out.soft[is] = c;
    if (expo < kExpClamp) {
      Eigen::RowVector<double, kNx> grad = Eigen::RowVector<double, kNx>::Zero();
      grad[kIdxS] = kappa * c * (-2.0 * ds_eff * es);
      grad[kIdxY] = kappa * c * (-2.0 * dy_eff * ey);
      grad[kIdxTime] = kappa * c * (2.0 * ds_eff * es * obs.vs + 2.0 * dy_eff * ey * obs.vy);
      if (!ds_floored) {
        grad[kIdxTime] += kappa * c * (obs.ds_decay * es * es);
      }
      if (!dy_floored) {
        grad[kIdxTime] += kappa * c * (obs.dy_decay * ey * ey);
      }
      out.soft_jac.row(is) = grad;
    }
    ++is;
  }

  // Road boundaries per ego circle. Centre queries are clamped to the mapped
  // range so a circle hanging over the map ends sees the edge boundary.
  const double s_lo = road.segments().front().s_start;
  const double s_hi = road.length();
  for (int i = 0; i < 2; ++i) {
    const double sc = std::clamp(ego[i].first, s_lo, s_hi);
    const double yc = ego[i].second;
    const auto [left, right] = road.boundaries_at(sc);
    const auto [dleft, dright] = road.boundary_slopes_at(sc);

    const double dsc_dxi = sign[i] * -d_ego * sin_xi;
    const double dyc_dxi = sign[i] * d_ego * cos_xi;

    // Left: rho + y_c - y_L(s_c) <= 0.
    Eigen::RowVector<double, kNx> gl = Eigen::RowVector<double, kNx>::Zero();
    gl[kIdxS] = -dleft;
    gl[kIdxY] = 1.0;
    gl[kIdxXi] = dyc_dxi - dleft * dsc_dxi;
    const double rl = params.body_radius + (yc - left);

    // Right: rho - y_c + y_R(s_c) <= 0.
    Eigen::RowVector<double, kNx> gr = Eigen::RowVector<double, kNx>::Zero();
    gr[kIdxS] = dright;
    gr[kIdxY] = -1.0;
    gr[kIdxXi] = -dyc_dxi + dright * dsc_dxi;
    const double rr = params.body_radius - (yc - right);

    out.hard[ih] = rl;
    out.hard_jac.row(ih) = gl;
    out.hard[ih + 1] = rr;
    out.hard_jac.row(ih + 1) = gr;

    const double el = kappa * rl;
    const double er = kappa * rr;
    const double cl = clamped_exp(el);
    const double cr = clamped_exp(er);
    out.soft[is] = cl;
    out.soft_jac.row(is) = (el < kExpClamp) ? (kappa * cl * gl).eval()
                                            : Eigen::RowVector<double, kNx>::Zero().eval();
    out.soft[is + 1] = cr;
    out.soft_jac.row(is + 1) = (er < kExpClamp) ? (kappa * cr * gr).eval()
                                                : Eigen::RowVector<double, kNx>::Zero().eval();
    ih += 2;
    is += 2;
  }

  // Spatial velocity profile: vx - bound(s) <= 0.
  const double arg = vel.kappa_vel * (vel.s_max - x.s);
  const double th = std::tanh(arg);
  out.hard[ih] = x.vx - vel.v_ref * std::max(0.0, th);
  out.hard_jac(ih, kIdxVx) = 1.0;
  if (th > 0.0) {
    out.hard_jac(ih, kIdxS) = vel.v_ref * vel.kappa_vel * (1.0 - th * th);
  }

  return out;
}

}  // namespace unmpc
