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

#ifndef UNMPC__VEHICLE_MODEL_HPP_
#define UNMPC__VEHICLE_MODEL_HPP_

#include <Eigen/Dense>

#include <functional>

namespace unmpc
{

inline constexpr int kNx = 9;  ///< states: s, y, xi, Vx, Vy, omega, delta, torque, t
inline constexpr int kNu = 2;  ///< controls: steering rate, torque rate

using StateVec = Eigen::Matrix<double, kNx, 1>;
using ControlVec = Eigen::Matrix<double, kNu, 1>;
using StateMat = Eigen::Matrix<double, kNx, kNx>;
using InputMat = Eigen::Matrix<double, kNx, kNu>;

enum StateIndex : int {
  kIdxS = 0,
  kIdxY,
  kIdxXi,
  kIdxVx,
  kIdxVy,
  kIdxOmega,
  kIdxDelta,
  kIdxTorque,
  kIdxTime
};

/// Single-track model parameters, SI units throughout.
struct VehicleParams
{
  double mass{1200.0};         // [kg]
  double yaw_inertia{1500.0};  // [kg m^2]
  double lf{1.2};              // C.o.M. to front axle [m]
  double lr{1.3};              // C.o.M. to rear axle [m]
  double wheel_radius{0.3};    // nominal rear wheel radius [m]

  // Pacejka coefficients (per tyre; forces are doubled per axle).
  double pacejka_b{10.0};
  double pacejka_c{1.5};
  double pacejka_d{3531.6};  // [N]
  double pacejka_e{0.97};

  double drag_coeff{0.4};  // quadratic aero drag [N s^2 / m^2]

  // Friction ellipse envelope [m/s^2].
  double ellipse_a1{3.5};  // max longitudinal acceleration
  double ellipse_a2{7.0};  // max longitudinal deceleration
  double ellipse_b1{8.0};  // lateral coupling span, acceleration branch
  double ellipse_b2{8.0};  // lateral coupling span, deceleration branch

  // Low-speed slip shaping.
  double kappa_slip{2.0};  // [s/m]
  double slip_eps0{0.4};   // [m^2/s^2]

  // Two-circle body approximation.
  double body_radius{0.9};    // [m]
  double circle_offset{1.1};  // circle centre offset along the body axis [m]

  /// Throws std::invalid_argument on non-physical values.
  void validate() const;
};

/// Actuator and rate limits applied as per-node bounds.
struct VehicleLimits
{
  double delta_min{-0.5};
  double delta_max{0.5};
  double torque_min{-2800.0};
  double torque_max{1400.0};
  double steer_rate_min{-0.5};
  double steer_rate_max{0.5};
  double torque_rate_min{-8000.0};
  double torque_rate_max{4000.0};
};

/// Model state in the curvilinear road frame plus integrated time.
struct VehicleState
{
  double s{0.0};       // curvilinear abscissa [m]
  double y{0.0};       // lateral offset from centreline [m]
  double xi{0.0};      // heading error psi - theta_c [rad]
  double vx{0.0};      // body-frame longitudinal velocity [m/s]
  double vy{0.0};      // body-frame lateral velocity [m/s]
  double omega{0.0};   // yaw rate [rad/s]
  double delta{0.0};   // front steer angle [rad]
  double torque{0.0};  // rear axle torque [N m]
  double t{0.0};       // integrated time [s]

  StateVec to_vector() const;
  static VehicleState from_vector(const StateVec & v);
};

struct ControlRates
{
  double steer_rate{0.0};   // [rad/s]
  double torque_rate{0.0};  // [N m / s]

  ControlVec to_vector() const { return ControlVec{steer_rate, torque_rate}; }
  static ControlRates from_vector(const ControlVec & v) { return {v[0], v[1]}; }
};

struct SlipAngles
{
  double front{0.0};
  double rear{0.0};
};

struct TyreForces
{
  double front_lateral{0.0};      // F_fc [N]
  double rear_lateral{0.0};       // F_rc [N]
  double rear_longitudinal{0.0};  // F_rl = torque / wheel_radius [N]
  double drag{0.0};               // F_aero [N]
};

struct TorqueBounds
{
  double min{0.0};
  double max{0.0};
};

/// Curvature of the road centreline as a function of s.
using CurvatureFn = std::function<double(double)>;

/// Textbook slip angles. Singular near vx = 0; throws std::domain_error when
/// the front denominator magnitude drops below 1e-9.
SlipAngles slip_angles_standard(const VehicleState & x, const VehicleParams & p);

/// Slip angles reshaped for low-speed validity: both numerators carry
/// vx * tanh(kappa_slip * vx) and the denominators are offset by slip_eps0, so
/// the result is finite for every state and exactly zero at vx = 0.
SlipAngles slip_angles_modified(const VehicleState & x, const VehicleParams & p);

/// Pacejka pure lateral force for one axle (two tyres). Odd in the slip angle
/// and bounded by 2 * pacejka_d.
double lateral_force(double slip_angle, const VehicleParams & p);

/// All contact/aero forces at the given state, using the modified slips.
TyreForces tyre_forces(const VehicleState & x, const VehicleParams & p);

/// Continuous-time state derivative in the curvilinear frame. The last entry
/// is dt/dt = 1. Throws std::domain_error when |1 - curvature*y| < 1e-6.
StateVec dynamics(
  const VehicleState & x, const ControlRates & u, double curvature, const VehicleParams & p);

/// Torque window implied by the friction ellipse at the given state and
/// (lagged) lateral acceleration. The square-root arguments are clamped at
/// zero so the window stays defined for transient iterates.
TorqueBounds friction_ellipse_bounds(
  const VehicleState & x, double vy_dot, const VehicleParams & p);

/// Jacobian of dynamics() w.r.t. the state, by central differences through
/// the curvature function.
StateMat dynamics_state_jacobian(
  const VehicleState & x, const ControlRates & u, const CurvatureFn & curvature,
  const VehicleParams & p);

/// One implicit-midpoint step of a generic ODE x' = f(x): solves
/// x+ = x + h f((x + x+)/2) by Newton iteration with a finite-difference
/// Jacobian frozen at the predictor midpoint (residual < 1e-10 within 20
/// iterations, else std::runtime_error). Optionally reports the dynamics
/// Jacobian at the converged midpoint.
StateVec implicit_midpoint_step(
  const std::function<StateVec(const StateVec &)> & f, const StateVec & x, double h,
  StateMat * jac_mid_out = nullptr);

/// One implicit-midpoint step of length h. The frozen-Jacobian Newton
/// iteration must reach a residual below 1e-10 within 20 iterations, else a
/// std::runtime_error is thrown. The time state is advanced exactly.
VehicleState integrate_step(
  const VehicleState & x, const ControlRates & u, double h, const CurvatureFn & curvature,
  const VehicleParams & p);

/// integrate_step plus the Jacobians of the discrete step map, obtained from
/// the implicit function theorem at the converged midpoint.
VehicleState integrate_step_with_sensitivities(
  const VehicleState & x, const ControlRates & u, double h, const CurvatureFn & curvature,
  const VehicleParams & p, StateMat & a_mat, InputMat & b_mat);

/// Jacobians of the discrete step map w.r.t. state and controls.
void sensitivities(
  const VehicleState & x, const ControlRates & u, double h, const CurvatureFn & curvature,
  const VehicleParams & p, StateMat & a_mat, InputMat & b_mat);

}  // namespace unmpc

#endif  // UNMPC__VEHICLE_MODEL_HPP_
