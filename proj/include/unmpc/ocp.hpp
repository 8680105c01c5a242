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

#ifndef UNMPC__OCP_HPP_
#define UNMPC__OCP_HPP_

#include <array>
#include <optional>
#include <vector>

#include "unmpc/constraints.hpp"
#include "unmpc/road_map.hpp"
#include "unmpc/vehicle_model.hpp"

namespace unmpc
{

/// Diagonal running weights over the h-vector (states + soft channels),
/// diagonal control weights, and the dense terminal state weight.
struct WeightSet
{
  Eigen::VectorXd q;              // kNx + n_soft entries
  Eigen::Vector2d r;
  Eigen::Matrix<double, kNx, kNx> p;
};

enum class DrivingMode { kDrive, kOvertake };

/// Per-mode tuning table: maximum desired deviations (zero span = free state)
/// and the cost of each soft-constraint family at hard-constraint activation.
struct ModeWeights
{
  std::array<double, kNx> state_span{0.0, 0.5, 0.1, 1.0, 0.5, 0.3, 0.05, 200.0, 0.0};
  double steer_rate_span{0.5};
  double torque_rate_span{1000.0};
  double obstacle_weight{10.0};
  double ellipse_weight{8.0};
  double boundary_weight{10.0};
};

/// Drive/overtake homotopy state: lambda = 0 is pure DRIVE weighting, 1 is
/// pure OVERTAKE; it moves toward the commanded mode by dt/blend_time per
/// cycle.
struct ModeSchedule
{
  double lambda{0.0};
  DrivingMode target{DrivingMode::kDrive};

  void set_target(DrivingMode mode) { target = mode; }
  void advance(double dt, double blend_time);
  DrivingMode dominant() const
  {
    return lambda < 0.5 ? DrivingMode::kDrive : DrivingMode::kOvertake;
  }
};

/// One record of the scenario's command timeline.
struct BehaviouralCommand
{
  DrivingMode mode{DrivingMode::kDrive};
  double v_ref{10.0};
  double y_ref{0.0};
  std::optional<double> s_stop;  // absolute stop point [m], DRIVE only
  double ellipse_ds{0.02};
  double ellipse_dy{0.15};
};

/// Static configuration shared by every per-cycle OCP build.
struct OcpConfig
{
  int nodes{60};
  double dt{0.05};
  int n_obstacles{3};
  double kappa_pen{2.0};
  double comfort_decel{4.0};     // sizes kappa_vel for the velocity profile
  double profile_headroom{1.1};  // profile plateau over the tracking reference
  double obstacle_margin{0.15};  // constraint-side inflation of obstacle radii [m]
  double blend_time{1.0};
  ModeWeights drive;
  ModeWeights overtake;
  VehicleLimits limits;
};

/// Everything one sub-planner needs for one cycle; immutable once built.
struct OcpDefinition
{
  int nodes{60};
  double dt{0.05};
  double cycle_start_time{0.0};
  WeightSet weights;
  Eigen::MatrixXd h_ref;  // (nodes+1) x (kNx + n_soft)
  VelocityProfile vel;
  SoftPenaltyConfig soft_cfg;
  std::vector<Obstacle> obstacles;  // padded to the fixed set size
  VehicleLimits limits;

  int n_soft() const { return soft_channel_count(static_cast<int>(obstacles.size())); }
  int n_h() const { return kNx + n_soft(); }
};

/// Q_ii = 1 / span^2; throws std::invalid_argument on a non-positive span.
double normalize_state_weight(double span);

/// Span vector to a weight vector, mapping zero spans to zero weight (free).
Eigen::VectorXd weights_from_spans(const Eigen::VectorXd & spans);

/// Discrete-time algebraic Riccati solution by structure-preserving doubling.
/// Throws std::runtime_error when the iteration stalls or the residual of
/// P = A'PA - A'PB (R + B'PB)^-1 B'PA + Q exceeds 1e-8 * |P|.
Eigen::MatrixXd dare(
  const Eigen::MatrixXd & a, const Eigen::MatrixXd & b, const Eigen::MatrixXd & q,
  const Eigen::MatrixXd & r);

/// Infinite-horizon LQR weight for the vehicle linearized at a straight-line
/// cruise at v_ref (Pacejka slip is degenerate at standstill, so the
/// linearization point is the cruise condition rather than the origin).
/// q_state/r are the running-cost diagonals; the stage cost is scaled by dt.
Eigen::Matrix<double, kNx, kNx> terminal_weight(
  const VehicleParams & params, double v_ref, const Eigen::VectorXd & q_state,
  const Eigen::Vector2d & r, double dt);

/// Entrywise convex combination; lambda in [0, 1].
WeightSet blend_modes(const WeightSet & drive, const WeightSet & overtake, double lambda);

/// Velocity profile for one cycle: the plateau sits profile_headroom above
/// the tracking reference (the tanh never quite reaches its own plateau, so
/// cruising exactly at v_ref must stay strictly inside the bound) and
/// kappa_vel caps the implied deceleration at comfort_decel.
VelocityProfile make_velocity_profile(const OcpConfig & config, double v_ref, double s_zero);

/// Distance the profile needs before its zero point to admit the speed vx:
/// the consistent "minimum stopping distance" for the shortest sub-planner
/// horizon (plus one reaction step and a small feasibility margin).
double profile_stop_distance(const OcpConfig & config, double v_ref, double vx);

/// Full WeightSet (including the Riccati terminal weight) for one mode table.
WeightSet mode_weight_set(
  const ModeWeights & table, int n_obstacles, const VehicleParams & params, double v_ref,
  double dt);

/// Assemble the OCP for one sub-planner cycle. horizon_end is the absolute s
/// at which the velocity profile reaches zero (already the min of the
/// sub-planner's simulated horizon and any commanded stop point).
OcpDefinition build_ocp(
  const VehicleState & estimate, const RoadMap & road, const std::vector<Obstacle> & visible,
  const BehaviouralCommand & command, const ModeSchedule & schedule, const OcpConfig & config,
  const VehicleParams & params, double horizon_end);

}  // namespace unmpc

#endif  // UNMPC__OCP_HPP_
