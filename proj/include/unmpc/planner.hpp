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

#ifndef UNMPC__PLANNER_HPP_
#define UNMPC__PLANNER_HPP_

#include <string>
#include <vector>

#include "unmpc/ocp.hpp"
#include "unmpc/sqp_rti.hpp"

namespace unmpc
{

struct PlannerConfig
{
  int sub_planner_count{3};
  double mid_horizon_ratio{0.6};  // middle horizons as fractions of perceived
  double comfort_decel{4.0};      // max admissible deceleration for stopping distance
  int leader_sqp{2};              // SQP iterations for the longest-horizon planner
  int follower_sqp{1};
  int max_wsr{80};
  double qp_budget_seconds{std::numeric_limits<double>::infinity()};
  double horizon_growth_factor{2.0};  // regrowth per cycle, in units of v_ref * dt
  bool parallel{true};
  bool emergency_policy{true};  // false: give up when every sub-planner fails
  OcpConfig ocp;
};

struct SubPlannerDiag
{
  char id{'A'};
  double horizon{0.0};  // simulated spatial horizon length [m]
  bool feasible{false};
  QpStatus qp_status{QpStatus::kOptimal};
  double kkt_residual{0.0};
  int wsr{0};
  int n_sqp{0};
  double prepare_seconds{0.0};
  double feedback_seconds{0.0};
  double total_seconds{0.0};
};

struct PlannerOutput
{
  ControlRates control;
  char selected{'-'};       // role label of the adopted sub-planner
  bool emergency{false};    // every sub-planner failed this cycle
  Eigen::MatrixXd planned_x;  // adopted trajectory ((nodes+1) x kNx)
  Eigen::MatrixXd planned_u;
  std::vector<SubPlannerDiag> diagnostics;
  double cycle_seconds{0.0};
};

/// vx^2 / (2 a_max) plus one reaction step vx * dt.
double stopping_distance(double vx, double a_max, double dt);

/// Parallel staggered-horizon NMPC: identical RTI sub-planners whose spatial
/// horizons step down from the perceived horizon to the stopping distance.
/// The adopted control is the longest-horizon feasible one; a failed leader
/// is reinitialized from the adopting donor and regrows its horizon.
class Planner
{
public:
  Planner(const VehicleParams & params, const RoadMap & road, PlannerConfig config);

  /// Constant-state iterates for every sub-planner.
  void initialize(const VehicleState & estimate);

  PlannerOutput plan_cycle(
    const VehicleState & estimate, const std::vector<Obstacle> & visible,
    const BehaviouralCommand & command, double perceived_horizon);

  /// Low-speed restart: every iterate reset to the current estimate. Rejected
  /// above 2 m/s, where a cold restart no longer converges within the
  /// per-cycle allotment.
  void restart_reinit(const VehicleState & estimate);

  const ModeSchedule & mode_schedule() const { return schedule_; }
  bool initialized() const { return initialized_; }

private:
  struct Sub
  {
    RtiEngine engine;
    ShootingIterate iterate;
    double horizon{0.0};
    bool has_iterate{false};
    bool cold{true};  // widened working-set allowance until the first success
  };

  void assign_horizons(double perceived, double vx, double v_ref);

  const VehicleParams & params_;
  const RoadMap & road_;
  PlannerConfig config_;
  std::vector<Sub> subs_;  // kept sorted by horizon, longest first
  ModeSchedule schedule_;
  bool initialized_{false};
};

}  // namespace unmpc

#endif  // UNMPC__PLANNER_HPP_
