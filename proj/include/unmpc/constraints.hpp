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

#ifndef UNMPC__CONSTRAINTS_HPP_
#define UNMPC__CONSTRAINTS_HPP_

#include <array>
#include <utility>
#include <vector>

#include "unmpc/road_map.hpp"
#include "unmpc/vehicle_model.hpp"

namespace unmpc
{

/// Circle-pair obstacle with constant velocities in the s-y frame.
struct Obstacle
{
  double s0{0.0};  // position at cycle start [m]
  double y0{0.0};
  double vs{0.0};  // frame velocities [m/s]
  double vy{0.0};
  double radius{0.9};         // rho_obs [m]
  double circle_offset{1.1};  // d_c_obs [m]
  double heading{0.0};        // psi_obs; recomputed from velocities when moving

  // Uncertainty growth: the safety-ellipse weights shrink linearly with the
  // prediction time at these rates [1/(m^2 s)].
  double ds_decay{0.0};
  double dy_decay{0.0};

  /// psi_obs = atan(vy/vs) for a moving obstacle; the scripted heading is kept
  /// for a static one (atan of 0/0 is undefined).
  void finalize_heading();
};

struct SoftPenaltyConfig
{
  double kappa_pen{2.0};  // exponential sharpness [1/m^2]
  double ds{0.02};        // safety-ellipse weights [1/m^2], from the command
  double dy{0.15};
};

/// Spatial velocity-profile parameters: Vx <= bound(s).
struct VelocityProfile
{
  double v_ref{0.0};
  double s_max{0.0};
  double kappa_vel{0.1};
};

/// Per-node constraint evaluation. "hard" entries are feasible iff <= 0.
/// Layout with N obstacles (fixed per build):
///   hard (4N + 5): [obstacle o: ego0-obs0, ego0-obs1, ego1-obs0, ego1-obs1]...,
///                  [boundary: ego0-left, ego0-right, ego1-left, ego1-right],
///                  [velocity profile]
///   soft (5N + 4): [obstacle o: 4 circle penalties, 1 safety ellipse]...,
///                  [boundary: same order as hard]
struct NodeConstraintEval
{
  Eigen::VectorXd hard;
  Eigen::MatrixXd hard_jac;  // rows x kNx
  Eigen::VectorXd soft;
  Eigen::MatrixXd soft_jac;
};

inline int hard_constraint_count(int n_obstacles) { return 4 * n_obstacles + 5; }
inline int soft_channel_count(int n_obstacles) { return 5 * n_obstacles + 4; }

/// Constant-velocity prediction, t relative to the cycle start.
std::pair<double, double> predict_obstacle(const Obstacle & obs, double t);

/// Centres of the two body circles at +/- offset along the heading-like angle.
std::array<std::pair<double, double>, 2> circle_centers(
  double s, double y, double angle, double offset);

/// (rho_ego + rho_obs)^2 - ds^2 - dy^2 for the four circle pairs.
std::array<double, 4> obstacle_hard_residuals(
  const std::array<std::pair<double, double>, 2> & ego_circles,
  const std::array<std::pair<double, double>, 2> & obs_circles, double rho_ego, double rho_obs);

/// exp(kappa * hard residual), exponent clamped at +30. Equals 1 exactly at
/// touching distance.
std::array<double, 4> obstacle_soft_penalties(
  const std::array<std::pair<double, double>, 2> & ego_circles,
  const std::array<std::pair<double, double>, 2> & obs_circles, double rho_ego, double rho_obs,
  double kappa_pen);

/// exp(kappa * (-ds*(s-s_obs)^2 - dy*(y-y_obs)^2)); 1 at coincidence.
double safety_ellipse_penalty(
  double ego_s, double ego_y, double obs_s, double obs_y, double ds, double dy, double kappa_pen);

struct BoundaryEval
{
  std::array<double, 4> hard;  // ego0-left, ego0-right, ego1-left, ego1-right
  std::array<double, 4> soft;
};

/// rho_ego +/- (y_c - boundary(s_c)) per side and circle, plus the paired
/// exponential penalties.
BoundaryEval boundary_residuals(
  const std::array<std::pair<double, double>, 2> & ego_circles, double rho_ego,
  const RoadMap & road, double kappa_pen);

/// V_ref * max(0, tanh(kappa_vel * (s_max - s))): monotone non-increasing in
/// s, zero at and beyond s_max.
double velocity_profile_bound(double s, double v_ref, double s_max, double kappa_vel);

/// Full node evaluation with state Jacobians. Obstacles must already be the
/// fixed-size set for this build (pad with far-away dummies); their positions
/// are advanced to tau = x.t - cycle_start_time.
NodeConstraintEval evaluate_node_constraints(
  const VehicleState & x, const RoadMap & road, const std::vector<Obstacle> & obstacles,
  const SoftPenaltyConfig & soft_cfg, double cycle_start_time, const VelocityProfile & vel,
  const VehicleParams & params);

}  // namespace unmpc

#endif  // UNMPC__CONSTRAINTS_HPP_
