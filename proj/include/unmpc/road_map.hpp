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

#ifndef UNMPC__ROAD_MAP_HPP_
#define UNMPC__ROAD_MAP_HPP_

#include <array>
#include <utility>
#include <vector>

#include "unmpc/vehicle_model.hpp"

namespace unmpc
{

/// Cubic centreline-angle segment: theta_c(s) = sum_i theta[i] * (s - s_start)^i.
struct CentrelineSegment
{
  double s_start{0.0};
  double s_end{0.0};
  std::array<double, 4> theta{0.0, 0.0, 0.0, 0.0};
  double anchor_x{0.0};  // global centreline position at s_start
  double anchor_y{0.0};
};

/// Lateral corridor limits as cubics in (s - s_start); left > right everywhere.
struct BoundarySegment
{
  std::array<double, 4> left{0.0, 0.0, 0.0, 0.0};
  std::array<double, 4> right{0.0, 0.0, 0.0, 0.0};
};

struct GlobalPose
{
  double x{0.0};
  double y{0.0};
  double psi{0.0};
};

struct CurvilinearPose
{
  double s{0.0};
  double y{0.0};
  double xi{0.0};
};

/// Piecewise-cubic local road description in the s-y frame. Immutable after
/// construction; safe for concurrent readers.
class RoadMap
{
public:
  /// Segments must be contiguous in s with headings continuous to 1e-6 rad.
  /// Anchors of segments after the first are recomputed by integrating the
  /// centreline so the global map is consistent.
  RoadMap(std::vector<CentrelineSegment> segments, std::vector<BoundarySegment> boundaries);

  /// Straight corridor along global X, centred at the origin.
  static RoadMap straight(double length, double left_limit, double right_limit);

  /// Least-squares fit of centreline-angle cubics (25 m segments, 5 m overlap
  /// windows) and boundary cubics from a polyline with per-point corridor
  /// half-widths. Throws on degenerate input or fit residuals beyond
  /// 0.02 rad / 0.05 m.
  static RoadMap fit_from_polyline(
    const std::vector<std::pair<double, double>> & points,
    const std::vector<double> & left_widths, const std::vector<double> & right_widths);

  double length() const { return segments_.back().s_end; }

  double heading_at(double s) const;
  double curvature_at(double s) const;

  /// (left limit, right limit) at s; left > right.
  std::pair<double, double> boundaries_at(double s) const;

  /// d/ds of the (left, right) limits at s.
  std::pair<double, double> boundary_slopes_at(double s) const;

  GlobalPose curvilinear_to_global(double s, double y, double xi) const;
  CurvilinearPose global_to_curvilinear(double x, double y, double psi) const;

  /// Curvature accessor bound to this map; the map must outlive the result.
  CurvatureFn curvature_fn() const;

  const std::vector<CentrelineSegment> & segments() const { return segments_; }
  const std::vector<BoundarySegment> & boundaries() const { return boundaries_; }

private:
  int segment_index(double s) const;
  void build_position_table();
  std::pair<double, double> centreline_position(double s) const;

  std::vector<CentrelineSegment> segments_;
  std::vector<BoundarySegment> boundaries_;

  // Dense centreline samples for fast global<->curvilinear conversion.
  struct Sample
  {
    double s, x, y;
  };
  std::vector<Sample> table_;
  double table_step_{0.5};
};

}  // namespace unmpc

#endif  // UNMPC__ROAD_MAP_HPP_
