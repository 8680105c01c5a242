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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "test_helpers.hpp"
#include "unmpc/vehicle_model.hpp"

using namespace unmpc;

namespace
{
const CurvatureFn kStraight = [](double) { return 0.0; };
}

TEST_CASE("standard slip angles")
{
  VehicleParams p;

  VehicleState x;
  x.vx = 10.0;
  auto s = slip_angles_standard(x, p);
  CHECK(s.front == doctest::Approx(0.0));
  CHECK(s.rear == doctest::Approx(0.0));

  x = VehicleState{};
  x.vx = 20.0;
  x.vy = 0.5;
  s = slip_angles_standard(x, p);
  CHECK(s.rear == doctest::Approx(std::atan(0.025)).epsilon(1e-12));
  CHECK(s.rear == doctest::Approx(0.024995).epsilon(1e-4));

  x = VehicleState{};
  x.vx = 10.0;
  x.omega = 0.2;
  s = slip_angles_standard(x, p);
  CHECK(s.front == doctest::Approx(std::atan(0.024)).epsilon(1e-12));
  CHECK(s.front == doctest::Approx(0.023995).epsilon(1e-4));

  x = VehicleState{};
  x.vy = 1.0;
  CHECK_THROWS_AS(slip_angles_standard(x, p), std::domain_error);
}

TEST_CASE("modified slip angles")
{
  VehicleParams p;

  VehicleState x;
  x.vy = 1.0;
  x.omega = 0.5;
  auto s = slip_angles_modified(x, p);
  CHECK(s.front == 0.0);
  CHECK(s.rear == 0.0);

  x = VehicleState{};
  x.vx = 20.0;
  x.vy = 0.5;
  s = slip_angles_modified(x, p);
  const double expected = std::atan(10.0 * std::tanh(40.0) / 400.4);
  CHECK(s.rear == doctest::Approx(expected).epsilon(1e-12));
  CHECK(s.rear == doctest::Approx(0.024970).epsilon(1e-4));

  x = VehicleState{};
  x.vx = 1.0;
  x.vy = 0.2;
  s = slip_angles_modified(x, p);
  CHECK(s.rear == doctest::Approx(std::atan(0.2 * std::tanh(2.0) / 1.4)).epsilon(1e-12));
  CHECK(std::abs(s.rear) < std::abs(std::atan(0.2)));
}

TEST_CASE("modified slips are finite and continuous near standstill")
{
  VehicleParams p;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    VehicleState x;
    x.vx = 5.0 * u(rng);
    x.vy = 3.0 * u(rng);
    x.omega = u(rng);
    x.delta = 0.5 * u(rng);
    const auto s = slip_angles_modified(x, p);
    CHECK(std::isfinite(s.front));
    CHECK(std::isfinite(s.rear));
  }
}

TEST_CASE("modified vs standard slips above 6.5 m/s")
{
  // With kappa=2, eps0=0.4 the small-slip deviation is eps0/(vx^2+eps0):
  // 1.57 % at 5 m/s, under 1 % above ~6.3 m/s.
  VehicleParams p;
  double worst_high = 0.0;
  double worst_5 = 0.0;
  for (double vx : {5.0, 6.5, 8.0, 11.0, 15.0, 20.0}) {
    for (double vy = -3.0; vy <= 3.0; vy += 0.5) {
      for (double om = -1.0; om <= 1.0; om += 0.25) {
        for (double de = -0.5; de <= 0.5; de += 0.125) {
          VehicleState x;
          x.vx = vx;
          x.vy = vy;
          x.omega = om;
          x.delta = de;
          const auto sm = slip_angles_modified(x, p);
          const auto ss = slip_angles_standard(x, p);
          const double df =
            std::abs(sm.front - ss.front) / std::max(std::abs(ss.front), 1e-6);
          const double dr = std::abs(sm.rear - ss.rear) / std::max(std::abs(ss.rear), 1e-6);
          const double d = std::max(df, dr);
          if (vx >= 6.4) {
            worst_high = std::max(worst_high, d);
          } else {
            worst_5 = std::max(worst_5, d);
          }
        }
      }
    }
  }
  CHECK(worst_high < 0.01);
  CHECK(worst_5 < 0.016);  // analytic bound eps0/(vx^2+eps0) at vx=5
}

TEST_CASE("pacejka lateral force")
{
  VehicleParams p;
  CHECK(lateral_force(0.0, p) == 0.0);

  // Odd and bounded.
  for (double a : {0.01, 0.05, 0.2, 1.0, 50.0}) {
    CHECK(lateral_force(-a, p) == doctest::Approx(-lateral_force(a, p)).epsilon(1e-14));
    CHECK(std::abs(lateral_force(a, p)) <= 2.0 * p.pacejka_d + 1e-9);
  }

  // Linear cornering stiffness for small slip.
  const double alpha = 1e-6;
  const double stiffness = 2.0 * p.pacejka_b * p.pacejka_c * p.pacejka_d;
  CHECK(lateral_force(alpha, p) == doctest::Approx(-stiffness * alpha).epsilon(1e-4));

  // Asymptote.
  const double asym = -2.0 * p.pacejka_d * std::sin(p.pacejka_c * M_PI / 2.0);
  CHECK(lateral_force(1e9, p) == doctest::Approx(asym).epsilon(1e-4));

  // Monotone non-increasing below the peak.
  double prev = lateral_force(0.0, p);
  for (double a = 0.005; a < 0.08; a += 0.005) {
    const double f = lateral_force(a, p);
    CHECK(f <= prev + 1e-12);
    prev = f;
  }
}

TEST_CASE("dynamics at trivial states")
{
  VehicleParams p;
  VehicleState x;
  ControlRates u;

  StateVec dx = dynamics(x, u, 0.0, p);
  for (int i = 0; i < kNx; ++i) {
    if (i == kIdxTime) {
      CHECK(dx[i] == 1.0);
    } else {
      CHECK(dx[i] == doctest::Approx(0.0));
    }
  }

  x.vx = 10.0;
  dx = dynamics(x, u, 0.0, p);
  CHECK(dx[kIdxS] == doctest::Approx(10.0));
  CHECK(dx[kIdxVx] == doctest::Approx(-p.drag_coeff * 100.0 / p.mass).epsilon(1e-12));
  CHECK(dx[kIdxY] == doctest::Approx(0.0));
  CHECK(dx[kIdxXi] == doctest::Approx(0.0));
  CHECK(dx[kIdxVy] == doctest::Approx(0.0));
  CHECK(dx[kIdxOmega] == doctest::Approx(0.0));

  // F_rl * Rr = Tr identically.
  x.torque = 123.4;
  CHECK(tyre_forces(x, p).rear_longitudinal * p.wheel_radius == doctest::Approx(123.4));

  x.y = 10.0;
  CHECK_THROWS_AS(dynamics(x, u, 0.1, p), std::domain_error);
}

TEST_CASE("steady-state yaw rate matches the force-balance root")
{
  VehicleParams p;
  const double vx = 11.0;
  const double delta = 0.15;

  // Root-find (vy, omega) with vy_dot = omega_dot = 0 at fixed vx, by damped
  // Newton on the two residuals with finite differences.
  Eigen::Vector2d z(0.0, 0.0);
  const auto resid = [&](const Eigen::Vector2d & w) {
    VehicleState x;
    x.vx = vx;
    x.vy = w[0];
    x.omega = w[1];
    x.delta = delta;
    const StateVec dx = dynamics(x, ControlRates{}, 0.0, p);
    return Eigen::Vector2d(dx[kIdxVy], dx[kIdxOmega]);
  };
  for (int it = 0; it < 60; ++it) {
    const Eigen::Vector2d r0 = resid(z);
    if (r0.norm() < 1e-12) break;
    Eigen::Matrix2d j;
    for (int c = 0; c < 2; ++c) {
      Eigen::Vector2d zp = z;
      Eigen::Vector2d zm = z;
      zp[c] += 1e-7;
      zm[c] -= 1e-7;
      j.col(c) = (resid(zp) - resid(zm)) / 2e-7;
    }
    z -= 0.8 * j.fullPivLu().solve(r0);
  }
  REQUIRE(resid(z).norm() < 1e-10);
  const double omega_ss = z[1];
  CHECK(omega_ss > 0.0);  // left turn for positive steer

  // Simulate with the vx-hold torque; the yaw rate settles onto the root.
  VehicleState x;
  x.vx = vx;
  x.delta = delta;
  for (int k = 0; k < 4000; ++k) {
    x.torque = unmpc::testing::vx_hold_torque(x, p);
    x = integrate_step(x, ControlRates{}, 0.002, kStraight, p);
    x.vx = vx;  // hold exactly against integration remainder
  }
  CHECK(x.omega == doctest::Approx(omega_ss).epsilon(1e-4));
}

TEST_CASE("friction ellipse torque bounds")
{
  VehicleParams p;
  VehicleState x;

  auto b = friction_ellipse_bounds(x, 0.0, p);
  CHECK(b.max == doctest::Approx(p.wheel_radius * p.mass * p.ellipse_a1).epsilon(1e-12));
  CHECK(b.min == doctest::Approx(-p.wheel_radius * p.mass * p.ellipse_a2).epsilon(1e-12));

  // Saturated lateral acceleration: the square root vanishes.
  x.vx = 10.0;
  x.vy = 0.3;
  x.omega = 0.2;
  x.delta = 0.1;
  const auto slips = slip_angles_modified(x, p);
  const double f_fc = lateral_force(slips.front, p);
  const double f_aero = p.drag_coeff * x.vx * std::abs(x.vx);
  const double coupling = x.omega * x.vy - f_fc * std::sin(x.delta) / p.mass - f_aero / p.mass;
  b = friction_ellipse_bounds(x, p.ellipse_b1, p);
  CHECK(b.max == doctest::Approx(p.wheel_radius * p.mass * (0.0 - coupling)).epsilon(1e-12));

  // Beyond the span the root clamps at zero instead of going complex.
  const auto clamped = friction_ellipse_bounds(x, 3.0 * p.ellipse_b1, p);
  CHECK(clamped.max == doctest::Approx(b.max).epsilon(1e-12));

  // Generic states against a direct transcription.
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    VehicleState xs;
    xs.vx = 12.0 * std::abs(u(rng));
    xs.vy = 2.0 * u(rng);
    xs.omega = u(rng);
    xs.delta = 0.4 * u(rng);
    const double vy_dot = 6.0 * u(rng);
    const auto got = friction_ellipse_bounds(xs, vy_dot, p);

    const auto sl = slip_angles_modified(xs, p);
    const double ffc = lateral_force(sl.front, p);
    const double fa = p.drag_coeff * xs.vx * std::abs(xs.vx);
    const double cpl = xs.omega * xs.vy - ffc * std::sin(xs.delta) / p.mass - fa / p.mass;
    const double r1 = std::sqrt(std::max(0.0, 1.0 - vy_dot * vy_dot / (p.ellipse_b1 * p.ellipse_b1)));
    const double r2 = std::sqrt(std::max(0.0, 1.0 - vy_dot * vy_dot / (p.ellipse_b2 * p.ellipse_b2)));
    CHECK(got.max == doctest::Approx(p.wheel_radius * p.mass * (p.ellipse_a1 * r1 - cpl)));
    CHECK(got.min == doctest::Approx(p.wheel_radius * p.mass * (-p.ellipse_a2 * r2 - cpl)));
    CHECK(got.min <= got.max);
  }
}

TEST_CASE("implicit midpoint step: linear decay closed form")
{
  // x' = -x  =>  one step is x0 (1 - h/2) / (1 + h/2).
  const auto f = [](const StateVec & v) { return StateVec(-v); };
  StateVec x0 = StateVec::Ones();
  const StateVec x1 = implicit_midpoint_step(f, x0, 0.1);
  for (int i = 0; i < kNx; ++i) {
    CHECK(x1[i] == doctest::Approx(0.95 / 1.05).epsilon(1e-12));
    CHECK(x1[i] == doctest::Approx(0.904762).epsilon(1e-6));
  }
}

TEST_CASE("integrate_step holds equilibrium and the exact time update")
{
  VehicleParams p;
  VehicleState x;
  x.t = 3.25;
  const VehicleState next = integrate_step(x, ControlRates{}, 0.05, kStraight, p);
  CHECK(next.t == doctest::Approx(3.30).epsilon(1e-15));
  CHECK(next.s == doctest::Approx(0.0));
  CHECK(next.vx == doctest::Approx(0.0));
  CHECK(next.delta == doctest::Approx(0.0));

  CHECK_THROWS_AS(integrate_step(x, ControlRates{}, -0.1, kStraight, p), std::invalid_argument);
}

TEST_CASE("integrate_step satisfies its defining midpoint equation")
{
  VehicleParams p;
  VehicleState x;
  x.vx = 9.0;
  x.vy = 0.2;
  x.omega = 0.1;
  x.delta = 0.05;
  x.torque = 150.0;
  x.y = 0.4;
  const CurvatureFn curv = [](double s) { return 0.01 * std::sin(0.05 * s); };
  const ControlRates u{0.1, 300.0};
  const double h = 0.05;

  const VehicleState next = integrate_step(x, u, h, curv, p);
  const StateVec mid = 0.5 * (x.to_vector() + next.to_vector());
  const VehicleState xm = VehicleState::from_vector(mid);
  const StateVec res =
    next.to_vector() - x.to_vector() - h * dynamics(xm, u, curv(xm.s), p);
  CHECK(res.norm() < 2e-10);
}

TEST_CASE("integrator order two on a swerve")
{
  VehicleParams p;
  const CurvatureFn curv = kStraight;
  // Piecewise-constant steering-rate schedule on the coarsest grid so every
  // finer step subdivides it exactly.
  const auto u_at = [](double t) {
    return ControlRates{0.1 * std::sin(2.0 * M_PI * t / 3.2), 0.0};
  };
  const double t_end = 3.2;
  const double h_coarse = 0.1;

  const auto run = [&](double h, bool reference) {
    VehicleState x;
    x.vx = 15.0;
    const int steps = static_cast<int>(std::round(t_end / h));
    for (int k = 0; k < steps; ++k) {
      // Zero-order hold sampled on the coarse grid.
      const double t_block = std::floor(k * h / h_coarse + 1e-12) * h_coarse;
      const ControlRates u = u_at(t_block);
      x = reference ? unmpc::testing::rk4_step(x, u, h, curv, p)
                    : integrate_step(x, u, h, curv, p);
    }
    return x;
  };

  const VehicleState ref = run(2.5e-4, true);
  std::vector<double> errs;
  for (double h : {0.1, 0.05, 0.025, 0.0125}) {
    const VehicleState got = run(h, false);
    errs.push_back((got.to_vector().head(6) - ref.to_vector().head(6)).norm());
  }
  // Least-squares slope in log2-log2.
  double slope_sum = 0.0;
  for (int i = 0; i + 1 < static_cast<int>(errs.size()); ++i) {
    slope_sum += std::log2(errs[i] / errs[i + 1]);
  }
  const double slope = slope_sum / 3.0;
  CHECK(slope > 1.9);
  CHECK(slope < 2.1);
}

TEST_CASE("sensitivities match finite differences of the step map")
{
  VehicleParams p;
  const CurvatureFn curv = [](double s) { return 0.008 * std::cos(0.03 * s); };
  VehicleState x;
  x.s = 5.0;
  x.y = -0.3;
  x.xi = 0.02;
  x.vx = 8.0;
  x.vy = -0.15;
  x.omega = 0.12;
  x.delta = -0.04;
  x.torque = 90.0;
  const ControlRates u{-0.2, 500.0};
  const double h = 0.05;

  StateMat a;
  InputMat b;
  sensitivities(x, u, h, curv, p, a, b);

  const auto step = [&](const StateVec & v, const ControlVec & uv) {
    return integrate_step(VehicleState::from_vector(v), ControlRates::from_vector(uv), h, curv, p)
      .to_vector();
  };

  const StateVec v0 = x.to_vector();
  const ControlVec u0 = u.to_vector();
  for (int j = 0; j < kNx; ++j) {
    StateVec vp = v0, vm = v0;
    vp[j] += 1e-5;
    vm[j] -= 1e-5;
    const StateVec col = (step(vp, u0) - step(vm, u0)) / 2e-5;
    for (int i = 0; i < kNx; ++i) {
      const double err = std::abs(a(i, j) - col[i]);
      CHECK(err <= 1e-4 * std::abs(col[i]) + 1e-7);
    }
  }
  for (int j = 0; j < kNu; ++j) {
    ControlVec up = u0, um = u0;
    up[j] += 1e-5;
    um[j] -= 1e-5;
    const StateVec col = (step(v0, up) - step(v0, um)) / 2e-5;
    for (int i = 0; i < kNx; ++i) {
      const double err = std::abs(b(i, j) - col[i]);
      CHECK(err <= 1e-4 * std::abs(col[i]) + 1e-7);
    }
  }

  // Trivial rows: time decouples, the steer integrator is exact.
  VehicleState eq;
  sensitivities(eq, ControlRates{}, h, kStraight, p, a, b);
  for (int j = 0; j < kNx; ++j) {
    CHECK(a(kIdxTime, j) == doctest::Approx(j == kIdxTime ? 1.0 : 0.0).epsilon(1e-10));
  }
  CHECK(b(kIdxTime, 0) == doctest::Approx(0.0));
  CHECK(b(kIdxTime, 1) == doctest::Approx(0.0));
  CHECK(a(kIdxDelta, kIdxDelta) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(b(kIdxDelta, 0) == doctest::Approx(h).epsilon(1e-10));
}

TEST_CASE("low-speed path agrees with the kinematic single-track model")
{
  VehicleParams p;
  const double vx = 1.0;
  const double delta = 0.15;
  const double h = 0.002;
  const double t_end = 3.0;

  VehicleState x;
  x.vx = vx;
  x.delta = delta;
  unmpc::testing::KinematicPose kin;

  double max_dev = 0.0;
  const int steps = static_cast<int>(t_end / h);
  for (int k = 0; k < steps; ++k) {
    x.torque = unmpc::testing::vx_hold_torque(x, p);
    x = integrate_step(x, ControlRates{}, h, kStraight, p);
    kin = unmpc::testing::kinematic_step(kin, vx, delta, p.lf, p.lr, h);
    // Straight road: curvilinear (s, y) is already the global frame.
    const double dev = std::hypot(x.s - kin.x, x.y - kin.y);
    max_dev = std::max(max_dev, dev);
  }
  const double arc_length = vx * t_end;
  CHECK(max_dev < 0.02 * arc_length);
}
