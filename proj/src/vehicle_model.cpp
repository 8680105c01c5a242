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

#include "unmpc/vehicle_model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace unmpc
{

void VehicleParams::validate() const
{
  const bool ok = mass > 0.0 && yaw_inertia > 0.0 && lf > 0.0 && lr > 0.0 &&
                  wheel_radius > 0.0 && pacejka_d > 0.0 && ellipse_a1 > 0.0 && ellipse_a2 > 0.0 &&
                  ellipse_b1 > 0.0 && ellipse_b2 > 0.0 && slip_eps0 > 0.0 && kappa_slip > 0.0;
  if (!ok) {
    throw std::invalid_argument("VehicleParams: non-positive physical parameter");
  }
}

StateVec VehicleState::to_vector() const
{
  StateVec v;
  v << s, y, xi, vx, vy, omega, delta, torque, t;
  return v;
}

VehicleState VehicleState::from_vector(const StateVec & v)
{
  VehicleState x;
  x.s = v[kIdxS];
  x.y = v[kIdxY];
  x.xi = v[kIdxXi];
  x.vx = v[kIdxVx];
  x.vy = v[kIdxVy];
  x.omega = v[kIdxOmega];
  x.delta = v[kIdxDelta];
  x.torque = v[kIdxTorque];
  x.t = v[kIdxTime];
  return x;
}

SlipAngles slip_angles_standard(const VehicleState & x, const VehicleParams & p)
{
  const double cos_d = std::cos(x.delta);
  const double sin_d = std::sin(x.delta);
  const double front_num = (x.vy + x.omega * p.lf) * cos_d - x.vx * sin_d;
  const double front_den = x.vx * cos_d + (x.vy + x.omega * p.lf) * sin_d;
  if (std::abs(front_den) < 1e-9 || std::abs(x.vx) < 1e-9) {
    throw std::domain_error("slip_angles_standard: denominator vanishes near zero speed");
  }
  SlipAngles out;
  out.front = std::atan(front_num / front_den);
  out.rear = std::atan((x.vy - x.omega * p.lr) / x.vx);
  return out;
}

SlipAngles slip_angles_modified(const VehicleState & x, const VehicleParams & p)
{
  const double cos_d = std::cos(x.delta);
  const double sin_d = std::sin(x.delta);
  const double shape = x.vx * std::tanh(p.kappa_slip * x.vx);  // >= 0, zero at vx = 0
  const double front_num = ((x.vy + x.omega * p.lf) * cos_d - x.vx * sin_d) * shape;
  const double front_den = (x.vx * cos_d + (x.vy + x.omega * p.lf) * sin_d) * x.vx + p.slip_eps0;
  const double rear_num = (x.vy - x.omega * p.lr) * shape;
  const double rear_den = x.vx * x.vx + p.slip_eps0;
  SlipAngles out;
  out.front = std::atan(front_num / front_den);
  out.rear = std::atan(rear_num / rear_den);
  return out;
}

double lateral_force(double slip_angle, const VehicleParams & p)
{
  const double ba = p.pacejka_b * slip_angle;
  const double arg = ba + p.pacejka_e * (std::atan(ba) - ba);
  return -2.0 * p.pacejka_d * std::sin(p.pacejka_c * std::atan(arg));
}

TyreForces tyre_forces(const VehicleState & x, const VehicleParams & p)
{
  const SlipAngles slips = slip_angles_modified(x, p);
  TyreForces f;
  f.front_lateral = lateral_force(slips.front, p);
  f.rear_lateral = lateral_force(slips.rear, p);
  f.rear_longitudinal = x.torque / p.wheel_radius;
  f.drag = p.drag_coeff * x.vx * std::abs(x.vx);
  return f;
}

StateVec dynamics(
  const VehicleState & x, const ControlRates & u, double curvature, const VehicleParams & p)
{
  const double proj = 1.0 - curvature * x.y;
  if (std::abs(proj) < 1e-6) {
    throw std::domain_error("dynamics: curvilinear projection singular (1 - curvature*y ~ 0)");
  }
  const TyreForces f = tyre_forces(x, p);
  const double cos_xi = std::cos(x.xi);
  const double sin_xi = std::sin(x.xi);
  const double cos_d = std::cos(x.delta);
  const double sin_d = std::sin(x.delta);

  const double s_dot = (x.vx * cos_xi - x.vy * sin_xi) / proj;

  StateVec dx;
  dx[kIdxS] = s_dot;
  dx[kIdxY] = x.vx * sin_xi + x.vy * cos_xi;
  dx[kIdxXi] = x.omega - curvature * s_dot;
  dx[kIdxVx] = x.omega * x.vy + (f.rear_longitudinal - f.front_lateral * sin_d - f.drag) / p.mass;
  dx[kIdxVy] = -x.omega * x.vx + (f.rear_lateral + f.front_lateral * cos_d) / p.mass;
  dx[kIdxOmega] = (-f.rear_lateral * p.lr + f.front_lateral * p.lf * cos_d) / p.yaw_inertia;
  dx[kIdxDelta] = u.steer_rate;
  dx[kIdxTorque] = u.torque_rate;
  dx[kIdxTime] = 1.0;
  return dx;
}

TorqueBounds friction_ellipse_bounds(
  const VehicleState & x, double vy_dot, const VehicleParams & p)
{
  const SlipAngles slips = slip_angles_modified(x, p);
  const double f_fc = lateral_force(slips.front, p);
  const double f_aero = p.drag_coeff * x.vx * std::abs(x.vx);
  const double coupling = x.omega * x.vy - f_fc * std::sin(x.delta) / p.mass - f_aero / p.mass;

  const double r1 = vy_dot / p.ellipse_b1;
  const double r2 = vy_dot / p.ellipse_b2;
  const double root1 = std::sqrt(std::max(0.0, 1.0 - r1 * r1));
  const double root2 = std::sqrt(std::max(0.0, 1.0 - r2 * r2));

  TorqueBounds b;
  b.max = p.wheel_radius * p.mass * (p.ellipse_a1 * root1 - coupling);
  b.min = p.wheel_radius * p.mass * (-p.ellipse_a2 * root2 - coupling);
  return b;
}

namespace
{

StateVec eval_with_curvature(
  const StateVec & v, const ControlRates & u, const CurvatureFn & curvature,
  const VehicleParams & p)
{
  const VehicleState x = VehicleState::from_vector(v);
  return dynamics(x, u, curvature(x.s), p);
}

}  // namespace

StateMat dynamics_state_jacobian(
  const VehicleState & x, const ControlRates & u, const CurvatureFn & curvature,
  const VehicleParams & p)
{
  StateMat jac;
  for (int j = 0; j < kNx; ++j) {
    const StateVec v0 = x.to_vector();
    const double eps = 1e-6 * std::max(1.0, std::abs(v0[j]));
    StateVec vp = v0;
    StateVec vm = v0;
    vp[j] += eps;
    vm[j] -= eps;
    jac.col(j) = (eval_with_curvature(vp, u, curvature, p) -
                  eval_with_curvature(vm, u, curvature, p)) /
                 (2.0 * eps);
  }
  return jac;
}

namespace
{

StateMat fd_jacobian(const std::function<StateVec(const StateVec &)> & f, const StateVec & v0)
{
  StateMat jac;
  for (int j = 0; j < kNx; ++j) {
    const double eps = 1e-6 * std::max(1.0, std::abs(v0[j]));
    StateVec vp = v0;
    StateVec vm = v0;
    vp[j] += eps;
    vm[j] -= eps;
    jac.col(j) = (f(vp) - f(vm)) / (2.0 * eps);
  }
  return jac;
}

}  // namespace

StateVec implicit_midpoint_step(
  const std::function<StateVec(const StateVec &)> & f, const StateVec & x, double h,
  StateMat * jac_mid_out)
{
  if (h <= 0.0) {
    throw std::invalid_argument("implicit_midpoint_step: step size must be positive");
  }
  StateVec vn = x + h * f(x);  // explicit predictor

  // Newton with a frozen finite-difference Jacobian; when the frozen map
  // fails to contract (stiff low-speed tyre dynamics far from the predictor)
  // the Jacobian is refreshed at the current iterate, a few times at most.
  for (int round = 0; round < 4; ++round) {
    const StateMat jf = fd_jacobian(f, 0.5 * (x + vn));
    const Eigen::PartialPivLU<StateMat> lu(StateMat::Identity() - 0.5 * h * jf);
    double prev_norm = std::numeric_limits<double>::max();
    for (int it = 0; it < 20; ++it) {
      const StateVec res = vn - x - h * f(0.5 * (x + vn));
      const double norm = res.norm();
      if (norm < 1e-10) {
        if (jac_mid_out != nullptr) {
          *jac_mid_out = fd_jacobian(f, 0.5 * (x + vn));
        }
        return vn;
      }
      if (norm > 4.0 * prev_norm) {
        break;  // diverging under this Jacobian
      }
      prev_norm = norm;
      vn -= lu.solve(res);
    }
  }
  throw std::runtime_error("implicit_midpoint_step: Newton iteration did not converge");
}

VehicleState integrate_step(
  const VehicleState & x, const ControlRates & u, double h, const CurvatureFn & curvature,
  const VehicleParams & p)
{
  const auto f = [&](const StateVec & v) { return eval_with_curvature(v, u, curvature, p); };
  const StateVec vn = implicit_midpoint_step(f, x.to_vector(), h);
  VehicleState out = VehicleState::from_vector(vn);
  out.t = x.t + h;
  return out;
}

VehicleState integrate_step_with_sensitivities(
  const VehicleState & x, const ControlRates & u, double h, const CurvatureFn & curvature,
  const VehicleParams & p, StateMat & a_mat, InputMat & b_mat)
{
  StateMat jf;
  const auto f = [&](const StateVec & v) { return eval_with_curvature(v, u, curvature, p); };
  const StateVec vn = implicit_midpoint_step(f, x.to_vector(), h, &jf);

  // Implicit function theorem on x+ = x + h f((x + x+)/2, u):
  //   (I - h/2 J) A = (I + h/2 J),  (I - h/2 J) B = h f_u.
  const Eigen::PartialPivLU<StateMat> lu(StateMat::Identity() - 0.5 * h * jf);
  a_mat = lu.solve(StateMat::Identity() + 0.5 * h * jf);

  InputMat fu = InputMat::Zero();
  fu(kIdxDelta, 0) = 1.0;
  fu(kIdxTorque, 1) = 1.0;
  b_mat = lu.solve(h * fu);

  VehicleState out = VehicleState::from_vector(vn);
  out.t = x.t + h;
  return out;
}

void sensitivities(
  const VehicleState & x, const ControlRates & u, double h, const CurvatureFn & curvature,
  const VehicleParams & p, StateMat & a_mat, InputMat & b_mat)
{
  integrate_step_with_sensitivities(x, u, h, curvature, p, a_mat, b_mat);
}

}  // namespace unmpc
