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

#include "unmpc/ocp.hpp"
#include "unmpc/sqp_rti.hpp"

using namespace unmpc;

namespace
{

/// Linear time-invariant stub without constraints or soft channels.
class LtiModel : public OcpModel
{
public:
  LtiModel(Eigen::MatrixXd a, Eigen::MatrixXd b) : a_(std::move(a)), b_(std::move(b)) {}

  int nx() const override { return static_cast<int>(a_.rows()); }
  int nu() const override { return static_cast<int>(b_.cols()); }
  int n_soft() const override { return 0; }
  int n_hard() const override { return 0; }

  void dynamics_step(
    const Eigen::VectorXd & x, const Eigen::VectorXd & u, Eigen::VectorXd & x_next,
    Eigen::MatrixXd & a, Eigen::MatrixXd & b) const override
  {
    x_next = a_ * x + b_ * u;
    a = a_;
    b = b_;
  }

  void stage_eval(int, const Eigen::VectorXd &, StageConstraintEval & out) const override
  {
    out.soft.resize(0);
    out.soft_jac.resize(0, nx());
    out.hard_val.resize(0);
    out.hard_jac.resize(0, nx());
    out.hard_lb.resize(0);
    out.hard_ub.resize(0);
    out.enabled.clear();
  }

private:
  Eigen::MatrixXd a_;
  Eigen::MatrixXd b_;
};

TranscriptionProblem lti_problem(
  const LtiModel & model, int nodes, double dt, const Eigen::VectorXd & q,
  const Eigen::VectorXd & r, const Eigen::MatrixXd & p)
{
  TranscriptionProblem prob;
  prob.nodes = nodes;
  prob.dt = dt;
  prob.q = q;
  prob.r = r;
  prob.p = p;
  prob.h_ref = Eigen::MatrixXd::Zero(nodes + 1, model.nx());
  prob.u_lb = Eigen::VectorXd::Constant(model.nu(), -kQpInf);
  prob.u_ub = Eigen::VectorXd::Constant(model.nu(), kQpInf);
  prob.model = &model;
  return prob;
}

ActiveSetSolver::Options qp_opts()
{
  ActiveSetSolver::Options o;
  o.max_wsr = 400;
  return o;
}

}  // namespace

TEST_CASE("iterate shift")
{
  ShootingIterate it;
  it.x.resize(4, 2);
  it.x << 0, 0, 1, 10, 2, 20, 3, 30;
  it.u.resize(3, 1);
  it.u << 5, 6, 7;

  const ShootingIterate shifted = shift_iterate(it, 0.5, 1);
  CHECK(shifted.x(0, 0) == 1);
  CHECK(shifted.x(2, 0) == 3);
  CHECK(shifted.x(3, 0) == 3);       // duplicated tail
  CHECK(shifted.x(3, 1) == 30.5);    // time advanced on the duplicate
  CHECK(shifted.u(0, 0) == 6);
  CHECK(shifted.u(2, 0) == 7);       // last control repeated

  // A constant trajectory is invariant except for time.
  ShootingIterate cst = make_constant_iterate(Eigen::Vector2d(4.0, 0.0), 3, 1, 0.5, 1);
  const ShootingIterate cst_shift = shift_iterate(cst, 0.5, 1);
  CHECK(cst_shift.x.col(0) == cst.x.col(0));
  for (int k = 0; k <= 3; ++k) {
    CHECK(cst_shift.x(k, 1) == doctest::Approx(cst.x(k, 1) + 0.5));
  }
}

TEST_CASE("prepare: stationary iterate gives a zero-gradient QP")
{
  LtiModel model(
    (Eigen::Matrix2d() << 1.0, 0.1, 0.0, 1.0).finished(), Eigen::Vector2d(0.005, 0.1));
  const auto prob = lti_problem(
    model, 10, 0.1, Eigen::Vector2d(1.0, 1.0), Eigen::VectorXd::Ones(1),
    Eigen::Matrix2d::Identity());

  const ShootingIterate it = make_constant_iterate(Eigen::Vector2d::Zero(), 10, 1, 0.1);
  RtiEngine engine;
  const CondensedQp cqp = engine.prepare(it, prob);
  CHECK(cqp.qp.g.lpNorm<Eigen::Infinity>() < 1e-14);
  CHECK(cqp.defect_norm < 1e-14);
  CHECK(cqp.qp.n() == 10);

  // Gauss-Newton Hessian is symmetric PSD.
  CHECK((cqp.qp.h - cqp.qp.h.transpose()).norm() < 1e-12);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cqp.qp.h);
  CHECK(es.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("prepare matches a hand condensation on a 3-node double integrator")
{
  const double dt = 0.1;
  Eigen::Matrix2d a;
  a << 1.0, dt, 0.0, 1.0;
  const Eigen::Vector2d b(0.5 * dt * dt, dt);
  LtiModel model(a, b);
  const int nodes = 3;

  const Eigen::Vector2d q(2.0, 0.5);
  Eigen::VectorXd r(1);
  r << 0.3;
  Eigen::Matrix2d p;
  p << 3.0, 0.2, 0.2, 1.5;
  auto prob = lti_problem(model, nodes, dt, q, r, p);

  // A non-stationary iterate with defects: states deliberately inconsistent.
  ShootingIterate it;
  it.x.resize(nodes + 1, 2);
  it.x << 0.3, -0.1, 0.25, 0.05, 0.1, 0.0, -0.05, 0.02;
  it.u.resize(nodes, 1);
  it.u << 0.2, -0.1, 0.05;

  RtiEngine engine;
  const CondensedQp cqp = engine.prepare(it, prob);

  // Independent condensation: build E and d explicitly from powers of A.
  std::vector<Eigen::MatrixXd> e(nodes + 1, Eigen::MatrixXd::Zero(2, nodes));
  std::vector<Eigen::VectorXd> d(nodes + 1, Eigen::VectorXd::Zero(2));
  std::vector<Eigen::MatrixXd> phi(nodes + 1, Eigen::Matrix2d::Identity());
  for (int k = 0; k < nodes; ++k) {
    const Eigen::VectorXd defect =
      a * it.x.row(k).transpose() + b * it.u(k, 0) - it.x.row(k + 1).transpose();
    phi[k + 1] = a * phi[k];
    e[k + 1] = a * e[k];
    e[k + 1].col(k) += b;
    d[k + 1] = a * d[k] + defect;
  }
  Eigen::MatrixXd h_ref = Eigen::MatrixXd::Zero(nodes, nodes);
  Eigen::VectorXd g_ref = Eigen::VectorXd::Zero(nodes);
  for (int k = 0; k < nodes; ++k) {
    const Eigen::Matrix2d qd = q.asDiagonal();
    h_ref += dt * e[k].transpose() * qd * e[k];
    h_ref(k, k) += dt * r(0);
    g_ref += dt * e[k].transpose() * qd * (it.x.row(k).transpose() + d[k]);
    g_ref(k) += dt * r(0) * it.u(k, 0);
  }
  h_ref += e[nodes].transpose() * p * e[nodes];
  g_ref += e[nodes].transpose() * p * (it.x.row(nodes).transpose() + d[nodes]);

  CHECK((cqp.qp.h - h_ref).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((cqp.qp.g - g_ref).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("feedback equals the infinite-horizon LQR law on the stub")
{
  const double dt = 0.05;
  Eigen::Matrix2d a;
  a << 1.0, dt, 0.0, 1.0;
  const Eigen::Vector2d b(0.5 * dt * dt, dt);
  LtiModel model(a, b);
  const int nodes = 40;

  const Eigen::Vector2d q(1.5, 0.4);
  Eigen::VectorXd r(1);
  r << 0.2;
  const Eigen::MatrixXd p = dare(a, b, dt * q.asDiagonal().toDenseMatrix(), dt * r.asDiagonal());
  auto prob = lti_problem(model, nodes, dt, q, r, p);

  const Eigen::MatrixXd btp = b.transpose() * p;
  const Eigen::MatrixXd gain =
    (dt * r.asDiagonal().toDenseMatrix() + btp * b).ldlt().solve(btp * a);

  RtiEngine engine;
  const ShootingIterate it = make_constant_iterate(Eigen::Vector2d::Zero(), nodes, 1, dt);
  const CondensedQp cqp = engine.prepare(it, prob);

  const Eigen::Vector2d x0(0.7, -0.3);
  const FeedbackResult fb = engine.feedback(cqp, it, prob, x0, qp_opts());
  REQUIRE(fb.ok);
  const Eigen::VectorXd u_lqr = -gain * x0;
  CHECK((fb.u_apply - u_lqr).lpNorm<Eigen::Infinity>() < 1e-6);

  // Affine in x0: three collinear parameters give collinear feedbacks.
  const FeedbackResult f1 = engine.feedback(cqp, it, prob, Eigen::Vector2d(0.2, 0.1), qp_opts());
  const FeedbackResult f2 = engine.feedback(cqp, it, prob, Eigen::Vector2d(0.4, 0.2), qp_opts());
  const FeedbackResult f3 = engine.feedback(cqp, it, prob, Eigen::Vector2d(0.6, 0.3), qp_opts());
  REQUIRE((f1.ok && f2.ok && f3.ok));
  CHECK(
    ((f3.u_apply - f2.u_apply) - (f2.u_apply - f1.u_apply)).lpNorm<Eigen::Infinity>() < 1e-9);

  // x0 equal to the first node of a stationary iterate reproduces u_0 = 0.
  const FeedbackResult f0 = engine.feedback(cqp, it, prob, Eigen::Vector2d::Zero(), qp_opts());
  REQUIRE(f0.ok);
  CHECK(f0.u_apply.lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("feedback expansion satisfies linearized continuity")
{
  const double dt = 0.1;
  Eigen::Matrix2d a;
  a << 1.0, dt, -0.05 * dt, 1.0;
  const Eigen::Vector2d b(0.0, dt);
  LtiModel model(a, b);
  const int nodes = 12;
  auto prob = lti_problem(
    model, nodes, dt, Eigen::Vector2d(1.0, 0.3), Eigen::VectorXd::Ones(1) * 0.1,
    Eigen::Matrix2d::Identity());

  ShootingIterate it;
  it.x = Eigen::MatrixXd::Random(nodes + 1, 2) * 0.4;
  it.u = Eigen::MatrixXd::Random(nodes, 1) * 0.2;

  RtiEngine engine;
  const CondensedQp cqp = engine.prepare(it, prob);
  const FeedbackResult fb = engine.feedback(cqp, it, prob, Eigen::Vector2d(0.3, -0.2), qp_opts());
  REQUIRE(fb.ok);

  for (int k = 0; k < nodes; ++k) {
    const Eigen::VectorXd dx_k = (fb.iterate.x.row(k) - it.x.row(k)).transpose();
    const Eigen::VectorXd du_k = (fb.iterate.u.row(k) - it.u.row(k)).transpose();
    const Eigen::VectorXd defect =
      a * it.x.row(k).transpose() + b * it.u.row(k).transpose() - it.x.row(k + 1).transpose();
    const Eigen::VectorXd lhs = (fb.iterate.x.row(k + 1) - it.x.row(k + 1)).transpose();
    const Eigen::VectorXd rhs = a * dx_k + b * du_k + defect;
    CHECK((lhs - rhs).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("control bounds are honored through the condensed box")
{
  const double dt = 0.1;
  Eigen::Matrix2d a;
  a << 1.0, dt, 0.0, 1.0;
  const Eigen::Vector2d b(0.5 * dt * dt, dt);
  LtiModel model(a, b);
  const int nodes = 20;
  auto prob = lti_problem(
    model, nodes, dt, Eigen::Vector2d(5.0, 1.0), Eigen::VectorXd::Ones(1) * 0.01,
    Eigen::Matrix2d::Identity());
  prob.u_lb = Eigen::VectorXd::Constant(1, -0.4);
  prob.u_ub = Eigen::VectorXd::Constant(1, 0.4);

  RtiEngine engine;
  const ShootingIterate it = make_constant_iterate(Eigen::Vector2d::Zero(), nodes, 1, dt);
  const CondensedQp cqp = engine.prepare(it, prob);
  const FeedbackResult fb = engine.feedback(cqp, it, prob, Eigen::Vector2d(3.0, 0.0), qp_opts());
  REQUIRE(fb.ok);
  CHECK(fb.u_apply[0] >= -0.4 - 1e-9);
  CHECK(fb.u_apply[0] <= 0.4 + 1e-9);
  CHECK(fb.u_apply[0] == doctest::Approx(-0.4));  // saturated toward the origin
}

TEST_CASE("sqp_cycle contracts the KKT residual on the vehicle swerve problem")
{
  VehicleParams params;
  const RoadMap road = RoadMap::straight(400.0, 5.0, -5.0);
  OcpConfig config;
  config.n_obstacles = 1;

  VehicleState ego;
  ego.vx = 10.0;
  ego.s = 5.0;
  BehaviouralCommand cmd;
  cmd.v_ref = 10.0;
  cmd.y_ref = 1.5;  // lane change reference
  ModeSchedule sched;
  const OcpDefinition ocp = build_ocp(ego, road, {}, cmd, sched, config, params, 300.0);
  const VehicleOcpModel model(params, road, ocp);
  const TranscriptionProblem prob = model.problem();

  const ShootingIterate it =
    make_constant_iterate(ego.to_vector(), ocp.nodes, kNu, ocp.dt, kIdxTime);

  RtiEngine engine;
  const SqpCycleResult res = engine.sqp_cycle(it, prob, ego.to_vector(), 2, qp_opts());
  REQUIRE(res.ok);
  REQUIRE(res.iterations.size() == 2);
  CHECK(res.iterations[1].kkt_residual <= res.iterations[0].kkt_residual);
  CHECK_THROWS_AS(engine.sqp_cycle(it, prob, ego.to_vector(), 0, qp_opts()), std::invalid_argument);
}

TEST_CASE("iterating the vehicle problem to convergence matches a deep reference run")
{
  VehicleParams params;
  const RoadMap road = RoadMap::straight(400.0, 5.0, -5.0);
  OcpConfig config;
  config.n_obstacles = 1;

  VehicleState ego;
  ego.vx = 9.0;
  ego.s = 5.0;
  BehaviouralCommand cmd;
  cmd.v_ref = 9.0;
  cmd.y_ref = 1.0;
  ModeSchedule sched;
  const OcpDefinition ocp = build_ocp(ego, road, {}, cmd, sched, config, params, 300.0);
  const VehicleOcpModel model(params, road, ocp);
  const TranscriptionProblem prob = model.problem();

  RtiEngine deep_engine;
  SqpCycleResult deep = deep_engine.sqp_cycle(
    make_constant_iterate(ego.to_vector(), ocp.nodes, kNu, ocp.dt, kIdxTime), prob,
    ego.to_vector(), 40, qp_opts());
  REQUIRE(deep.ok);

  RtiEngine engine;
  SqpCycleResult mid = engine.sqp_cycle(
    make_constant_iterate(ego.to_vector(), ocp.nodes, kNu, ocp.dt, kIdxTime), prob,
    ego.to_vector(), 12, qp_opts());
  REQUIRE(mid.ok);

  CHECK(
    (mid.iterate.u - deep.iterate.u).lpNorm<Eigen::Infinity>() /
      std::max(1.0, deep.iterate.u.lpNorm<Eigen::Infinity>()) <
    1e-4);
  CHECK(deep.iterations.back().kkt_residual < 1e-7);
}

TEST_CASE("soft channels far from everything contribute nothing")
{
  VehicleParams params;
  const RoadMap road = RoadMap::straight(600.0, 50.0, -50.0);  // walls far away
  OcpConfig config;
  config.n_obstacles = 1;

  VehicleState ego;
  ego.vx = 10.0;
  ego.s = 5.0;
  ego.y = 0.0;
  BehaviouralCommand cmd;
  cmd.v_ref = 10.0;
  ModeSchedule sched;

  Obstacle far;
  far.s0 = 500.0;
  far.vs = 0.0;
  const OcpDefinition with_far = build_ocp(ego, road, {far}, cmd, sched, config, params, 500.0);
  const OcpDefinition without = build_ocp(ego, road, {}, cmd, sched, config, params, 500.0);

  const VehicleOcpModel m1(params, road, with_far);
  const VehicleOcpModel m2(params, road, without);
  const ShootingIterate it =
    make_constant_iterate(ego.to_vector(), with_far.nodes, kNu, with_far.dt, kIdxTime);

  RtiEngine engine;
  const CondensedQp c1 = engine.prepare(it, m1.problem());
  const CondensedQp c2 = engine.prepare(it, m2.problem());
  CHECK((c1.qp.h - c2.qp.h).lpNorm<Eigen::Infinity>() < 1e-9);
  CHECK((c1.qp.g - c2.qp.g).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("vehicle stage rows: gating and the friction-ellipse torque window")
{
  VehicleParams params;
  const RoadMap road = RoadMap::straight(300.0, 3.5, -3.5);
  OcpConfig config;
  config.n_obstacles = 1;

  VehicleState ego;
  ego.vx = 8.0;
  ego.s = 0.0;
  BehaviouralCommand cmd;
  cmd.v_ref = 8.0;
  ModeSchedule sched;

  Obstacle near;
  near.s0 = 4.5;
  near.vs = 0.0;
  const OcpDefinition ocp = build_ocp(ego, road, {near}, cmd, sched, config, params, 200.0);
  const VehicleOcpModel model(params, road, ocp);

  StageConstraintEval eval;
  model.stage_eval(1, ego.to_vector(), eval);
  REQUIRE(static_cast<int>(eval.enabled.size()) == model.n_hard());
  // Circle pairs inside twice the constraint radius stay active, the rest
  // are gated: ego front (s=1.1) vs obstacle rear (s=3.4) is 2.3 m < 3.6 m,
  // ego front vs obstacle front (s=5.6) is 4.5 m.
  CHECK(eval.enabled[1] == 1);
  CHECK(eval.enabled[0] == 0);

  VehicleState far_state = ego;
  far_state.s = 100.0;
  model.stage_eval(1, far_state.to_vector(), eval);
  CHECK(eval.enabled[0] == 0);  // gated out beyond the activation radius

  // The torque row intersects static limits with the friction ellipse.
  const int row_torque = model.n_hard() - 1;
  const TorqueBounds ell = friction_ellipse_bounds(ego, 0.0, params);
  CHECK(eval.hard_ub(row_torque) == doctest::Approx(std::min(ell.max, 1400.0)));
  CHECK(eval.hard_lb(row_torque) == doctest::Approx(std::max(ell.min, -2800.0)));
}
