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

#include "unmpc/planner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace unmpc
{

double stopping_distance(double vx, double a_max, double dt)
{
  if (a_max <= 0.0) {
    throw std::invalid_argument("stopping_distance: a_max must be positive");
  }
  return vx * vx / (2.0 * a_max) + std::abs(vx) * dt;
}

Planner::Planner(const VehicleParams & params, const RoadMap & road, PlannerConfig config)
: params_(params), road_(road), config_(std::move(config))
{
  if (config_.sub_planner_count < 1) {
    throw std::invalid_argument("Planner: need at least one sub-planner");
  }
  subs_.resize(config_.sub_planner_count);
}

void Planner::initialize(const VehicleState & estimate)
{
  for (Sub & sub : subs_) {
    sub.iterate = make_constant_iterate(
      estimate.to_vector(), config_.ocp.nodes, kNu, config_.ocp.dt, kIdxTime);
    sub.has_iterate = true;
    sub.engine.reset_hotstart();
  }
  initialized_ = true;
}

void Planner::restart_reinit(const VehicleState & estimate)
{
  if (estimate.vx >= 2.0) {
    throw std::domain_error("restart_reinit: only applicable below 2 m/s");
  }
  initialize(estimate);
}

void Planner::assign_horizons(double perceived, double vx, double v_ref)
{
  const int n = static_cast<int>(subs_.size());
  // The profile-consistent stopping distance: the tanh profile needs more
  // room than v^2/(2a) to admit the current speed at the first nodes.
  const double stop_dist = std::max(
    stopping_distance(vx, config_.comfort_decel, config_.ocp.dt),
    profile_stop_distance(config_.ocp, v_ref, vx));
  const double grow = config_.horizon_growth_factor * std::max(v_ref, 1.0) * config_.ocp.dt;

  for (int i = 0; i < n; ++i) {
    double target = perceived;
    if (n > 1 && i == n - 1) {
      target = std::min(perceived, stop_dist);
    } else if (i > 0) {
      // Intermediate horizons step down geometrically with the ratio, but
      // never below the stopping distance.
      target = std::max(perceived * std::pow(config_.mid_horizon_ratio, i), stop_dist);
      target = std::min(target, perceived);
    }
    double h = subs_[i].horizon;
    if (h <= 0.0) {
      h = target;
    } else if (target < h) {
      h = target;  // shrink instantly: never plan beyond the target
    } else {
      h = std::min(target, h + grow);  // regrow rate-limited after a promotion
    }
    // The shortest horizon must always cover the stopping distance.
    if (i == n - 1) {
      h = std::max(h, std::min(perceived, stop_dist));
    }
    subs_[i].horizon = h;
  }
  // Ordering invariant: longest first.
  std::stable_sort(subs_.begin(), subs_.end(), [](const Sub & a, const Sub & b) {
    return a.horizon > b.horizon;
  });
}

PlannerOutput Planner::plan_cycle(
  const VehicleState & estimate, const std::vector<Obstacle> & visible,
  const BehaviouralCommand & command, double perceived_horizon)
{
  const auto cycle_start = std::chrono::steady_clock::now();
  if (!initialized_) {
    initialize(estimate);
  }

  schedule_.set_target(command.mode);
  schedule_.advance(config_.ocp.dt, config_.ocp.blend_time);

  assign_horizons(perceived_horizon, estimate.vx, command.v_ref);

  const int n = static_cast<int>(subs_.size());
  std::vector<OcpDefinition> ocps(n);
  std::vector<SqpCycleResult> results(n);

  ActiveSetSolver::Options qp_opts;
  qp_opts.max_wsr = config_.max_wsr;
  qp_opts.budget_seconds = config_.qp_budget_seconds;
  qp_opts.hessian_shift = 1e-7;

  const auto run_sub = [&](int i) {
    Sub & sub = subs_[i];
    try {
      ocps[i] = build_ocp(
        estimate, road_, visible, command, schedule_, config_.ocp, params_,
        estimate.s + sub.horizon);
      const VehicleOcpModel model(params_, road_, ocps[i]);
      const TranscriptionProblem prob = model.problem();
      const ShootingIterate shifted = shift_iterate(sub.iterate, config_.ocp.dt, kIdxTime);
      sub.engine.shift_hotstart(kNu, model.n_hard());
      const int n_sqp = (i == 0) ? config_.leader_sqp : config_.follower_sqp;
      ActiveSetSolver::Options opts = qp_opts;
      if (sub.cold) {
        // A fresh iterate faces the whole active set at once; tracking
        // afterwards is incremental.
        opts.max_wsr *= 4;
      }
      results[i] = sub.engine.sqp_cycle(shifted, prob, estimate.to_vector(), n_sqp, opts);
    } catch (const std::exception &) {
      results[i].ok = false;
    }
  };

  if (config_.parallel && n > 1) {
    std::vector<std::thread> workers;
    workers.reserve(n);
    for (int i = 0; i < n; ++i) {
      workers.emplace_back(run_sub, i);
    }
    for (auto & w : workers) {
      w.join();
    }
  } else {
    for (int i = 0; i < n; ++i) {
      run_sub(i);
    }
  }

  PlannerOutput out;
  out.diagnostics.resize(n);
  int selected = -1;
  for (int i = 0; i < n; ++i) {
    SubPlannerDiag & d = out.diagnostics[i];
    d.id = static_cast<char>('A' + i);
    d.horizon = subs_[i].horizon;
    d.feasible = results[i].ok;
    d.n_sqp = static_cast<int>(results[i].iterations.size());
    for (const SqpIterationStats & s : results[i].iterations) {
      d.prepare_seconds += s.prepare_seconds;
      d.feedback_seconds += s.feedback_seconds;
      d.qp_status = s.qp_status;
      d.kkt_residual = s.kkt_residual;
      d.wsr += s.wsr;
    }
    d.total_seconds = d.prepare_seconds + d.feedback_seconds;
    if (selected < 0 && results[i].ok) {
      selected = i;
    }
  }

  if (selected >= 0) {
    out.selected = static_cast<char>('A' + selected);
    out.control = ControlRates::from_vector(results[selected].u_apply);
    out.planned_x = results[selected].iterate.x;
    out.planned_u = results[selected].iterate.u;

    // Adopt results. A failed planner with a longer horizon than the donor
    // (a demoted leader) restarts from the donor's solution at the donor's
    // pre-extension horizon; the donor regrows toward the perceived horizon
    // on subsequent cycles. A failed shorter-horizon planner keeps its own
    // iterate and retries, carrying its warm start forward.
    const double donor_horizon = subs_[selected].horizon;
    for (int i = 0; i < n; ++i) {
      if (results[i].ok) {
        subs_[i].iterate = results[i].iterate;
        subs_[i].has_iterate = true;
        subs_[i].cold = false;
      } else if (i < selected) {
        subs_[i].iterate = results[selected].iterate;
        subs_[i].horizon = donor_horizon;
        subs_[i].engine.reset_hotstart();
        subs_[i].cold = true;
      }
    }
  } else {
    // Backup of last resort: maximum braking within the friction ellipse,
    // zero steering rate, all rates inside the actuator limits.
    out.emergency = true;
    out.selected = '-';
    const TorqueBounds ellipse = friction_ellipse_bounds(estimate, 0.0, params_);
    const double torque_goal = std::max(ellipse.min, config_.ocp.limits.torque_min);
    const double rate = (torque_goal - estimate.torque) / config_.ocp.dt;
    out.control.steer_rate = 0.0;
    out.control.torque_rate = std::clamp(
      rate, config_.ocp.limits.torque_rate_min, config_.ocp.limits.torque_rate_max);
    out.planned_x.resize(0, kNx);
    out.planned_u.resize(0, kNu);
  }

  out.cycle_seconds =
    std::chrono::duration<double>(std::chrono::steady_clock::now() - cycle_start).count();
  return out;
}

}  // namespace unmpc
