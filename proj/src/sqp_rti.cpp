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

#include "unmpc/sqp_rti.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace unmpc
{

namespace
{

double seconds_since(std::chrono::steady_clock::time_point start)
{
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

ShootingIterate make_constant_iterate(const Eigen::VectorXd & x0, int nodes, int nu, double dt,
                                      int time_index)
{
  ShootingIterate it;
  it.x = x0.transpose().replicate(nodes + 1, 1);
  it.u = Eigen::MatrixXd::Zero(nodes, nu);
  if (time_index >= 0) {
    for (int k = 0; k <= nodes; ++k) {
      it.x(k, time_index) = x0[time_index] + k * dt;
    }
  }
  return it;
}

ShootingIterate shift_iterate(const ShootingIterate & it, double dt, int time_index)
{
  const int n = it.nodes();
  ShootingIterate out = it;
  out.x.topRows(n) = it.x.bottomRows(n);
  out.x.row(n) = it.x.row(n);
  out.u.topRows(n - 1) = it.u.bottomRows(n - 1);
  out.u.row(n - 1) = it.u.row(n - 1);
  if (time_index >= 0) {
    out.x(n, time_index) = it.x(n, time_index) + dt;
  }
  return out;
}

CondensedQp RtiEngine::prepare(
  const ShootingIterate & iterate, const TranscriptionProblem & prob) const
{
  const OcpModel & model = *prob.model;
  const int nodes = prob.nodes;
  const int nx = model.nx();
  const int nu = model.nu();
  const int nh = nx + model.n_soft();
  const int n_hard = model.n_hard();
  const int nv = nodes * nu;

  if (iterate.x.rows() != nodes + 1 || iterate.x.cols() != nx || iterate.u.rows() != nodes) {
    throw std::invalid_argument("prepare: iterate dimensions do not match the problem");
  }

  CondensedQp c;
  c.phi.assign(nodes + 1, Eigen::MatrixXd::Identity(nx, nx));
  c.e_mat.assign(nodes + 1, Eigen::MatrixXd::Zero(nx, nv));
  c.d_vec.assign(nodes + 1, Eigen::VectorXd::Zero(nx));

  // Forward sweep: sensitivities, defects, condensing recursions.
  Eigen::VectorXd x_next(nx);
  Eigen::MatrixXd a(nx, nx);
  Eigen::MatrixXd b(nx, nu);
  for (int k = 0; k < nodes; ++k) {
    model.dynamics_step(iterate.x.row(k), iterate.u.row(k), x_next, a, b);
    const Eigen::VectorXd defect = x_next - iterate.x.row(k + 1).transpose();
    c.defect_norm = std::max(c.defect_norm, defect.lpNorm<Eigen::Infinity>());
    c.phi[k + 1] = a * c.phi[k];
    c.e_mat[k + 1].leftCols((k + 1) * nu) = a * c.e_mat[k].leftCols((k + 1) * nu);
    c.e_mat[k + 1].middleCols(k * nu, nu) += b;
    c.d_vec[k + 1] = a * c.d_vec[k] + defect;
  }

  // Gauss-Newton cost condensation.
  Eigen::MatrixXd hessian = Eigen::MatrixXd::Zero(nv, nv);
  c.g0 = Eigen::VectorXd::Zero(nv);
  c.g_x0 = Eigen::MatrixXd::Zero(nv, nx);

  StageConstraintEval stage;
  std::vector<StageConstraintEval> stages(nodes + 1);
  for (int k = 0; k <= nodes; ++k) {
    model.stage_eval(k, iterate.x.row(k), stages[k]);
  }

  for (int k = 0; k < nodes; ++k) {
    const int active_cols = k * nu;  // E_k has zero columns beyond k*nu
    const auto ek = c.e_mat[k].leftCols(active_cols);

    // h = [x; soft], J_h = [I; S_k].
    Eigen::VectorXd res_h(nh);
    res_h.head(nx) = iterate.x.row(k).transpose() - prob.h_ref.row(k).head(nx).transpose();
    res_h.tail(nh - nx) = stages[k].soft - prob.h_ref.row(k).tail(nh - nx).transpose();

    // Weighted Jacobian through the state chain: (J_h E_k) and (J_h Phi_k).
    Eigen::MatrixXd jh_e(nh, active_cols);
    Eigen::MatrixXd jh_phi(nh, nx);
    jh_e.topRows(nx) = ek;
    jh_e.bottomRows(nh - nx) = stages[k].soft_jac * ek;
    jh_phi.topRows(nx) = c.phi[k];
    jh_phi.bottomRows(nh - nx) = stages[k].soft_jac * c.phi[k];

    Eigen::VectorXd res_shift = res_h;
    res_shift.head(nx) += c.d_vec[k];
    res_shift.tail(nh - nx) += stages[k].soft_jac * c.d_vec[k];

    const Eigen::MatrixXd wq = prob.dt * prob.q.asDiagonal() * jh_e;
    hessian.topLeftCorner(active_cols, active_cols) += jh_e.transpose() * wq;
    c.g0.head(active_cols) += wq.transpose() * res_shift;
    c.g_x0.topRows(active_cols) += wq.transpose() * jh_phi;

    // Control block.
    hessian.block(k * nu, k * nu, nu, nu) += prob.dt * prob.r.asDiagonal();
    c.g0.segment(k * nu, nu) +=
      prob.dt * prob.r.asDiagonal() * iterate.u.row(k).transpose();
  }

  // Terminal state cost.
  {
    const Eigen::VectorXd res_n =
      iterate.x.row(nodes).transpose() - prob.h_ref.row(nodes).head(nx).transpose() +
      c.d_vec[nodes];
    const Eigen::MatrixXd pe = prob.p * c.e_mat[nodes];
    hessian += c.e_mat[nodes].transpose() * pe;
    c.g0 += pe.transpose() * res_n;
    c.g_x0 += pe.transpose() * c.phi[nodes];
  }

  c.qp.h = 0.5 * (hessian + hessian.transpose());
  c.qp.g = c.g0;

  // Control box bounds per node.
  c.qp.lb.resize(nv);
  c.qp.ub.resize(nv);
  for (int k = 0; k < nodes; ++k) {
    c.qp.lb.segment(k * nu, nu) = prob.u_lb - iterate.u.row(k).transpose();
    c.qp.ub.segment(k * nu, nu) = prob.u_ub - iterate.u.row(k).transpose();
  }

  // Hard rows for nodes 1..N; node 0 depends only on the parameter.
  const int m = nodes * n_hard;
  c.qp.a = Eigen::MatrixXd::Zero(m, nv);
  c.qp.lba = Eigen::VectorXd::Constant(m, -kQpInf);
  c.qp.uba = Eigen::VectorXd::Constant(m, kQpInf);
  c.row_x0 = Eigen::MatrixXd::Zero(m, nx);
  for (int k = 1; k <= nodes; ++k) {
    const StageConstraintEval & se = stages[k];
    for (int j = 0; j < n_hard; ++j) {
      const int row = (k - 1) * n_hard + j;
      if (!se.enabled[j]) {
        continue;
      }
      const Eigen::RowVectorXd jac = se.hard_jac.row(j);
      c.qp.a.row(row).head(k * nu) = jac * c.e_mat[k].leftCols(k * nu);
      const double shift = se.hard_val(j) + jac.dot(c.d_vec[k]);
      if (se.hard_lb(j) > -kQpInf) {
        c.qp.lba(row) = se.hard_lb(j) - shift;
      }
      if (se.hard_ub(j) < kQpInf) {
        c.qp.uba(row) = se.hard_ub(j) - shift;
      }
      c.row_x0.row(row) = jac * c.phi[k];
    }
  }
  c.lba0 = c.qp.lba;
  c.uba0 = c.qp.uba;
  return c;
}

FeedbackResult RtiEngine::feedback(
  const CondensedQp & cqp, const ShootingIterate & iterate, const TranscriptionProblem & prob,
  const Eigen::VectorXd & x0, const ActiveSetSolver::Options & opts)
{
  const int nodes = prob.nodes;
  const int nu = prob.model->nu();

  FeedbackResult out;
  const Eigen::VectorXd dx0 = x0 - iterate.x.row(0).transpose();

  DenseQp qp = cqp.qp;
  qp.g = cqp.g0 + cqp.g_x0 * dx0;
  const Eigen::VectorXd row_shift = cqp.row_x0 * dx0;
  for (int r = 0; r < qp.m(); ++r) {
    if (cqp.lba0(r) > -kQpInf) {
      qp.lba(r) = cqp.lba0(r) - row_shift(r);
    }
    if (cqp.uba0(r) < kQpInf) {
      qp.uba(r) = cqp.uba0(r) - row_shift(r);
    }
  }

  QpSolution sol;
  const bool can_hotstart = last_solution_ &&
                            static_cast<int>(last_solution_->bound_state.size()) == qp.n() &&
                            static_cast<int>(last_solution_->row_state.size()) == qp.m();
  if (can_hotstart) {
    // Parametric continuation from the (node-shifted) previous solution.
    sol = qp_.hotstart(qp, opts, *last_solution_);
  } else {
    sol = qp_.solve(qp, opts);
  }
  last_solution_ = sol;

  out.qp_status = sol.status;
  out.wsr = sol.working_set_changes;
  out.qp_kkt = sol.kkt_residual;
  out.kkt_residual = std::max(sol.kkt_residual, cqp.defect_norm);
  if (sol.status != QpStatus::kOptimal) {
    out.ok = false;
    out.iterate = iterate;
    return out;
  }

  // Expand: full-step update of controls and states.
  out.iterate = iterate;
  for (int k = 0; k < nodes; ++k) {
    out.iterate.u.row(k) += sol.x.segment(k * nu, nu).transpose();
  }
  for (int k = 0; k <= nodes; ++k) {
    Eigen::VectorXd dxk = cqp.phi[k] * dx0 + cqp.d_vec[k];
    if (k > 0) {
      dxk += cqp.e_mat[k].leftCols(k * nu) * sol.x.head(k * nu);
    }
    out.iterate.x.row(k) += dxk.transpose();
  }
  out.iterate.feasible = true;
  out.u_apply = out.iterate.u.row(0).transpose();
  out.ok = true;
  return out;
}

void RtiEngine::shift_hotstart(int nu, int n_hard)
{
  if (!last_solution_) {
    return;
  }
  auto shift_blocks = [](ActivityVec & v, int block) {
    if (block <= 0 || static_cast<int>(v.size()) < 2 * block) {
      return;
    }
    // Shift one block earlier; the trailing block keeps its old content,
    // matching the duplicated tail node of the shifted iterate.
    std::copy(v.begin() + block, v.end(), v.begin());
  };
  shift_blocks(last_solution_->bound_state, nu);
  shift_blocks(last_solution_->row_state, n_hard);
  // For a plan that was not executed, the same correction recurs next cycle;
  // the node-shifted correction (with its duals) is the natural warm point.
  Eigen::VectorXd & x = last_solution_->x;
  const Eigen::Index nv = x.size();
  if (nv >= 2 * nu) {
    x.head(nv - nu) = x.tail(nv - nu).eval();
  }
  Eigen::VectorXd & dual = last_solution_->dual;
  if (dual.size() == nv + static_cast<Eigen::Index>(last_solution_->row_state.size())) {
    if (nv >= 2 * nu) {
      dual.head(nv - nu) = dual.segment(nu, nv - nu).eval();
    }
    const Eigen::Index mr = dual.size() - nv;
    if (mr >= 2 * n_hard) {
      dual.segment(nv, mr - n_hard) = dual.segment(nv + n_hard, mr - n_hard).eval();
    }
  }
}

SqpCycleResult RtiEngine::sqp_cycle(
  ShootingIterate iterate, const TranscriptionProblem & prob, const Eigen::VectorXd & x0,
  int n_sqp, const ActiveSetSolver::Options & opts)
{
  if (n_sqp < 1) {
    throw std::invalid_argument("sqp_cycle: n_sqp must be at least 1");
  }
  SqpCycleResult out;
  out.iterate = std::move(iterate);
  for (int i = 0; i < n_sqp; ++i) {
    SqpIterationStats stats;
    auto t0 = std::chrono::steady_clock::now();
    const CondensedQp cqp = prepare(out.iterate, prob);
    stats.prepare_seconds = seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    FeedbackResult fb = feedback(cqp, out.iterate, prob, x0, opts);
    stats.feedback_seconds = seconds_since(t0);
    stats.kkt_residual = fb.kkt_residual;
    stats.qp_status = fb.qp_status;
    stats.wsr = fb.wsr;
    out.iterations.push_back(stats);

    if (!fb.ok) {
      out.ok = false;
      return out;
    }
    out.iterate = std::move(fb.iterate);
    out.u_apply = fb.u_apply;
  }
  out.ok = true;
  return out;
}

VehicleOcpModel::VehicleOcpModel(
  const VehicleParams & params, const RoadMap & road, const OcpDefinition & ocp)
: params_(params), road_(road), ocp_(ocp)
{
}

int VehicleOcpModel::n_hard() const
{
  // Obstacle/boundary/velocity rows plus the steer and torque state rows.
  return hard_constraint_count(static_cast<int>(ocp_.obstacles.size())) + 2;
}

void VehicleOcpModel::dynamics_step(
  const Eigen::VectorXd & x, const Eigen::VectorXd & u, Eigen::VectorXd & x_next,
  Eigen::MatrixXd & a, Eigen::MatrixXd & b) const
{
  const VehicleState xs = VehicleState::from_vector(x);
  const ControlRates ur{u[0], u[1]};
  StateMat a9;
  InputMat b9;
  // Clamp map queries at the edges: transient shooting iterates may step
  // marginally outside the mapped range.
  const double s_lo = road_.segments().front().s_start;
  const double s_hi = road_.length();
  const VehicleState next = integrate_step_with_sensitivities(
    xs, ur, ocp_.dt,
    [this, s_lo, s_hi](double s) { return road_.curvature_at(std::clamp(s, s_lo, s_hi)); },
    params_, a9, b9);
  x_next = next.to_vector();
  a = a9;
  b = b9;
}

void VehicleOcpModel::stage_eval(
  int node, const Eigen::VectorXd & x, StageConstraintEval & out) const
{
  const VehicleState xs = VehicleState::from_vector(x);
  const NodeConstraintEval eval = evaluate_node_constraints(
    xs, road_, ocp_.obstacles, ocp_.soft_cfg, ocp_.cycle_start_time, ocp_.vel, params_);

  const int n_base = static_cast<int>(eval.hard.size());
  const int n_rows = n_base + 2;
  out.soft = eval.soft;
  out.soft_jac = eval.soft_jac;
  out.hard_val.resize(n_rows);
  out.hard_jac = Eigen::MatrixXd::Zero(n_rows, kNx);
  out.hard_lb = Eigen::VectorXd::Constant(n_rows, -kQpInf);
  out.hard_ub = Eigen::VectorXd::Constant(n_rows, kQpInf);
  out.enabled.assign(n_rows, 1);

  out.hard_val.head(n_base) = eval.hard;
  out.hard_jac.topRows(n_base) = eval.hard_jac;
  out.hard_ub.head(n_base).setZero();  // hard residuals feasible iff <= 0

  // Activation gating for obstacle rows: keep a row only when the predicted
  // circle distance is inside twice the constraint radius.
  const int n_obs = static_cast<int>(ocp_.obstacles.size());
  for (int o = 0; o < n_obs; ++o) {
    const double r_sum = params_.body_radius + ocp_.obstacles[o].radius;
    for (int cpair = 0; cpair < 4; ++cpair) {
      const int idx = 4 * o + cpair;
      if (eval.hard(idx) < -3.0 * r_sum * r_sum) {
        out.enabled[idx] = 0;
      }
    }
  }

  // Row hygiene: every linearized row costs the active-set method one
  // recalculation when it activates, so rows that cannot matter this cycle
  // are dropped from the QP.
  //
  // Velocity rows: deep in the tanh plateau the bound carries no information
  // (and the reference sits on it to machine precision); elsewhere every
  // second node suffices for a smooth profile.
  if (ocp_.vel.kappa_vel * (ocp_.vel.s_max - xs.s) > 8.0 || (node % 2) != 0) {
    out.enabled[n_base - 1] = 0;
  }
  // Boundary rows only when a circle is within one body width of a limit.
  for (int j = 0; j < 4; ++j) {
    if (eval.hard(4 * n_obs + j) < -2.0 * params_.body_radius) {
      out.enabled[4 * n_obs + j] = 0;
    }
  }

  // Steer angle state row, active only when the iterate is near a limit
  // (one rate-bounded step cannot jump the gate margin).
  const int row_delta = n_base;
  out.hard_val(row_delta) = xs.delta;
  out.hard_jac(row_delta, kIdxDelta) = 1.0;
  out.hard_lb(row_delta) = ocp_.limits.delta_min;
  out.hard_ub(row_delta) = ocp_.limits.delta_max;
  const double delta_margin = 0.3 * (ocp_.limits.delta_max - ocp_.limits.delta_min);
  if (
    xs.delta > ocp_.limits.delta_min + delta_margin &&
    xs.delta < ocp_.limits.delta_max - delta_margin) {
    out.enabled[row_delta] = 0;
  }

  // Torque state row: static limits intersected with the friction ellipse at
  // the iterate (lagged lateral acceleration from the current dynamics).
  const int row_torque = n_base + 1;
  double vy_dot = 0.0;
  try {
    const double s_q =
      std::clamp(xs.s, road_.segments().front().s_start, road_.length());
    vy_dot = dynamics(xs, ControlRates{}, road_.curvature_at(s_q), params_)[kIdxVy];
  } catch (const std::domain_error &) {
    // Singular projection on a transient iterate: fall back to zero coupling.
  }
  const TorqueBounds ellipse = friction_ellipse_bounds(xs, vy_dot, params_);
  out.hard_val(row_torque) = xs.torque;
  out.hard_jac(row_torque, kIdxTorque) = 1.0;
  out.hard_lb(row_torque) = std::max(ocp_.limits.torque_min, ellipse.min);
  out.hard_ub(row_torque) = std::min(ocp_.limits.torque_max, ellipse.max);
  if (out.hard_lb(row_torque) > out.hard_ub(row_torque)) {
    // Transiently impossible window: keep the static limits so the QP stays
    // well-posed; the planner-level monitor owns divergence handling.
    out.hard_lb(row_torque) = ocp_.limits.torque_min;
    out.hard_ub(row_torque) = ocp_.limits.torque_max;
  }
}

TranscriptionProblem VehicleOcpModel::problem() const
{
  TranscriptionProblem prob;
  prob.nodes = ocp_.nodes;
  prob.dt = ocp_.dt;
  prob.q = ocp_.weights.q;
  prob.r = ocp_.weights.r;
  prob.p = ocp_.weights.p;
  prob.h_ref = ocp_.h_ref;
  prob.u_lb = Eigen::Vector2d(ocp_.limits.steer_rate_min, ocp_.limits.torque_rate_min);
  prob.u_ub = Eigen::Vector2d(ocp_.limits.steer_rate_max, ocp_.limits.torque_rate_max);
  prob.model = this;
  return prob;
}

}  // namespace unmpc
