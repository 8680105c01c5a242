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

#ifndef UNMPC__SIMULATOR_HPP_
#define UNMPC__SIMULATOR_HPP_

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "unmpc/planner.hpp"
#include "unmpc/road_map.hpp"

namespace unmpc
{

/// Plant model spec: same single-track dynamics, finer explicit integration,
/// multiplicative parameter perturbation.
struct PlantSpec
{
  double step{0.001};  // <= 1 ms
  double mass_factor{1.0};
  double inertia_factor{1.0};
  double grip_factor{1.0};  // scales the Pacejka D coefficient
  double drag_factor{1.0};
};

struct NoiseSpec
{
  bool enabled{false};
  std::array<double, kNx> stddev{};  // additive measurement noise per state
};

struct ScenarioObstacle
{
  Obstacle obstacle;        // pose at t = 0 plus constant velocities
  double detect_time{0.0};  // hidden from the planner before this time
};

struct TimedCommand
{
  double time{0.0};
  BehaviouralCommand command;
};

struct Scenario
{
  std::string name{"scenario"};
  std::shared_ptr<const RoadMap> road;
  VehicleState ego;
  std::vector<ScenarioObstacle> obstacles;
  std::vector<TimedCommand> commands;  // sorted by activation time
  double perceived_horizon{80.0};
  double duration{10.0};
  PlantSpec plant;
  NoiseSpec noise;
  std::uint64_t seed{0};

  void validate() const;  // throws std::invalid_argument
};

struct PlantRecord
{
  double t{0.0};
  VehicleState state;
  GlobalPose pose;
};

struct CycleRecord
{
  int cycle{0};
  double t{0.0};
  PlannerOutput output;
  BehaviouralCommand command;
  int visible_obstacles{0};
};

struct SimEvent
{
  double t{0.0};
  std::string type;
  std::string detail;
};

struct SimLog
{
  std::vector<PlantRecord> plant;
  std::vector<CycleRecord> cycles;
  std::vector<SimEvent> events;
  bool collision{false};
  bool map_exit{false};
  bool exhausted{false};  // every sub-planner failed and the policy aborts
  bool completed{false};
  double end_time{0.0};
};

/// Audited minima over the plant-truth log.
struct MarginsReport
{
  double min_obstacle_clearance{1e9};  // circle-pair distance minus radii sum
  double min_left_margin{1e9};
  double min_right_margin{1e9};
  double min_torque_margin{1e9};  // distance of Tr inside its allowed window
  double peak_decel{0.0};         // max of -dVx/dt over a 50 ms window
  double peak_lateral_offset{0.0};
  double min_speed{1e9};
  double max_speed{-1e9};
};

/// Apply the multiplicative perturbation to a parameter set.
VehicleParams perturb_params(const VehicleParams & nominal, const PlantSpec & plant);

/// One classical RK4 step of the plant dynamics under zero-order-hold rates.
VehicleState step_plant(
  const VehicleState & state, const ControlRates & control, double h,
  const CurvatureFn & curvature, const VehicleParams & plant_params);

/// 20 Hz closed loop: plan on the (optionally noisy) measured state, hold the
/// rates between cycles, advance obstacles on their scripts, detect collisions
/// in plant truth at every plant step. Bitwise reproducible for a fixed seed.
SimLog run_closed_loop(
  const Scenario & scenario, const VehicleParams & params, const PlannerConfig & planner_config);

MarginsReport constraint_audit(
  const SimLog & log, const Scenario & scenario, const VehicleParams & params);

}  // namespace unmpc

#endif  // UNMPC__SIMULATOR_HPP_
