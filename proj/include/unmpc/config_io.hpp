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

#ifndef UNMPC__CONFIG_IO_HPP_
#define UNMPC__CONFIG_IO_HPP_

#include <json.hpp>

#include <filesystem>
#include <string>
#include <utility>

#include "unmpc/simulator.hpp"

namespace unmpc
{

using Json = nlohmann::json;

/// Parameter file: the vehicle model constants plus the actuator limits.
std::pair<VehicleParams, VehicleLimits> load_vehicle_params(const Json & j);
Json to_json(const VehicleParams & params, const VehicleLimits & limits);

/// Road file: {"segments":[...]} with explicit cubics, or
/// {"polyline": {"points": [[x,y],...], "left_width": w|[w...],
///  "right_width": ...}} fitted at load.
RoadMap load_road(const Json & j);

/// Scenario file; "road" may be inline or {"file": "relative/path.json"}.
Scenario load_scenario(const Json & j, const std::filesystem::path & base_dir);

/// Planner configuration; the vehicle limits are injected from the parameter
/// file so bounds live in one place.
PlannerConfig load_planner_config(const Json & j, const VehicleLimits & limits);

Json read_json_file(const std::filesystem::path & path);

}  // namespace unmpc

#endif  // UNMPC__CONFIG_IO_HPP_
