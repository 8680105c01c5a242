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

#include "unmpc/road_map.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace unmpc
{

namespace
{

constexpr double kRangeTol = 1e-9;

double eval_cubic(const std::array<double, 4> & c, double u)
{
  return c[0] + u * (c[1] + u * (c[2] + u * c[3]));
}

double eval_cubic_derivative(const std::array<double, 4> & c, double u)
{
  return c[1] + u * (2.0 * c[2] + u * 3.0 * c[3]);
}

double wrap_angle(double a)
{
  while (a > M_PI) a -= 2.0 * M_PI;
  while (a < -M_PI) a += 2.0 * M_PI;
  return a;
}

// 5-point Gauss-Legendre nodes/weights on [-1, 1].
constexpr std::array<double, 5> kGlNodes = {
  -0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831, 0.9061798459386640};
constexpr std::array<double, 5> kGlWeights = {
  0.2369268850561891, 0.4786286704993665, 0.5688888888888889, 0.4786286704993665,
  0.2369268850561891};

}  // namespace

RoadMap::RoadMap(std::vector<CentrelineSegment> segments, std::vector<BoundarySegment> boundaries)
: segments_(std::move(segments)), boundaries_(std::move(boundaries))
{
  if (segments_.empty() || segments_.size() != boundaries_.size()) {
    throw std::invalid_argument("RoadMap: need one boundary block per centreline segment");
  }
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const auto & seg = segments_[i];
    if (!(seg.s_start < seg.s_end)) {
      throw std::invalid_argument("RoadMap: segment with non-increasing s range");
    }
    if (i > 0) {
      const auto & prev = segments_[i - 1];
      if (std::abs(prev.s_end - seg.s_start) > kRangeTol) {
        throw std::invalid_argument("RoadMap: segments not contiguous in s");
      }
      const double theta_prev = eval_cubic(prev.theta, prev.s_end - prev.s_start);
      if (std::abs(theta_prev - seg.theta[0]) > 1e-6) {
        throw std::invalid_argument("RoadMap: centreline angle discontinuous across segments");
      }
    }
  }
  build_position_table();

  // Non-degenerate corridor.
  for (double s = segments_.front().s_start; s <= length(); s += 1.0) {
    const auto [left, right] = boundaries_at(std::min(s, length()));
    if (!(left > right)) {
      throw std::invalid_argument("RoadMap: corridor degenerate (left <= right)");
    }
  }
}

RoadMap RoadMap::straight(double len, double left_limit, double right_limit)
{
  CentrelineSegment seg;
  seg.s_start = 0.0;
  seg.s_end = len;
  BoundarySegment bnd;
  bnd.left = {left_limit, 0.0, 0.0, 0.0};
  bnd.right = {right_limit, 0.0, 0.0, 0.0};
  return RoadMap({seg}, {bnd});
}

int RoadMap::segment_index(double s) const
{
  if (s < segments_.front().s_start - kRangeTol || s > segments_.back().s_end + kRangeTol) {
    throw std::out_of_range("RoadMap: s outside the mapped range");
  }
  int lo = 0;
  int hi = static_cast<int>(segments_.size()) - 1;
  while (lo < hi) {
    const int mid = (lo + hi) / 2;
    if (s <= segments_[mid].s_end) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  return lo;
}

double RoadMap::heading_at(double s) const
{
  const auto & seg = segments_[segment_index(s)];
  return eval_cubic(seg.theta, s - seg.s_start);
}

double RoadMap::curvature_at(double s) const
{
  const auto & seg = segments_[segment_index(s)];
  return eval_cubic_derivative(seg.theta, s - seg.s_start);
}

std::pair<double, double> RoadMap::boundaries_at(double s) const
{
  const int idx = segment_index(s);
  const double u = s - segments_[idx].s_start;
  return {eval_cubic(boundaries_[idx].left, u), eval_cubic(boundaries_[idx].right, u)};
}

std::pair<double, double> RoadMap::boundary_slopes_at(double s) const
{
  const int idx = segment_index(s);
  const double u = s - segments_[idx].s_start;
  return {
    eval_cubic_derivative(boundaries_[idx].left, u),
    eval_cubic_derivative(boundaries_[idx].right, u)};
}

CurvatureFn RoadMap::curvature_fn() const
{
  return [this](double s) { return curvature_at(s); };
}

void RoadMap::build_position_table()
{
  // Re-anchor every segment after the first by integrating the centreline.
  double x = segments_.front().anchor_x;
  double y = segments_.front().anchor_y;
  table_.clear();
  const double s0 = segments_.front().s_start;
  const double s_end = segments_.back().s_end;
  table_.push_back({s0, x, y});
  std::size_t seg_idx = 0;
  double s = s0;
  while (s < s_end - kRangeTol) {
    double s_next = std::min(s + table_step_, s_end);
    // Never integrate across a segment boundary in one interval.
    while (seg_idx + 1 < segments_.size() && s_next > segments_[seg_idx].s_end + kRangeTol) {
      s_next = segments_[seg_idx].s_end;
    }
    const double half = 0.5 * (s_next - s);
    const double mid = 0.5 * (s_next + s);
    double dx = 0.0;
    double dy = 0.0;
    for (int q = 0; q < 5; ++q) {
      const double sq = mid + half * kGlNodes[q];
      const auto & seg = segments_[segment_index(sq)];
      const double th = eval_cubic(seg.theta, sq - seg.s_start);
      dx += kGlWeights[q] * std::cos(th);
      dy += kGlWeights[q] * std::sin(th);
    }
    x += half * dx;
    y += half * dy;
    s = s_next;
    table_.push_back({s, x, y});
    if (seg_idx + 1 < segments_.size() && s >= segments_[seg_idx].s_end - kRangeTol) {
      ++seg_idx;
      segments_[seg_idx].anchor_x = x;
      segments_[seg_idx].anchor_y = y;
    }
  }
}

std::pair<double, double> RoadMap::centreline_position(double s) const
{
  if (s < table_.front().s - kRangeTol || s > table_.back().s + kRangeTol) {
    throw std::out_of_range("RoadMap: s outside the mapped range");
  }
  // Locate the last sample at or below s, then integrate the remainder.
  const auto it = std::upper_bound(
    table_.begin(), table_.end(), s, [](double v, const Sample & smp) { return v < smp.s; });
  const Sample & base = *(it == table_.begin() ? it : std::prev(it));
  const double half = 0.5 * (s - base.s);
  if (std::abs(half) < 1e-12) {
    return {base.x, base.y};
  }
  const double mid = 0.5 * (s + base.s);
  double dx = 0.0;
  double dy = 0.0;
  for (int q = 0; q < 5; ++q) {
    const double sq = mid + half * kGlNodes[q];
    const double th = heading_at(sq);
    dx += kGlWeights[q] * std::cos(th);
    dy += kGlWeights[q] * std::sin(th);
  }
  return {base.x + half * dx, base.y + half * dy};
}

GlobalPose RoadMap::curvilinear_to_global(double s, double y, double xi) const
{
  const auto [cx, cy] = centreline_position(s);
  const double th = heading_at(s);
  GlobalPose out;
  out.x = cx - y * std::sin(th);
  out.y = cy + y * std::cos(th);
  out.psi = th + xi;
  return out;
}

CurvilinearPose RoadMap::global_to_curvilinear(double x, double y, double psi) const
{
  // Coarse seed from the sample table, then Newton on the orthogonality
  // condition (P - C(s)) . T(s) = 0.
  double best_d2 = std::numeric_limits<double>::max();
  double s = table_.front().s;
  for (const auto & smp : table_) {
    const double d2 = (smp.x - x) * (smp.x - x) + (smp.y - y) * (smp.y - y);
    if (d2 < best_d2) {
      best_d2 = d2;
      s = smp.s;
    }
  }
  const double s_lo = table_.front().s;
  const double s_hi = table_.back().s;
  bool converged = false;
  for (int it = 0; it < 30; ++it) {
    const auto [cx, cy] = centreline_position(s);
    const double th = heading_at(s);
    const double tx = std::cos(th);
    const double ty = std::sin(th);
    const double rx = x - cx;
    const double ry = y - cy;
    const double g = rx * tx + ry * ty;
    const double lat = -rx * ty + ry * tx;  // signed offset along the normal
    const double gp = -1.0 + curvature_at(s) * lat;
    if (std::abs(gp) < 1e-6) {
      throw std::domain_error("global_to_curvilinear: projection singular");
    }
    const double step = -g / gp;
    s = std::clamp(s + step, s_lo, s_hi);
    if (std::abs(step) < 1e-10) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw std::runtime_error("global_to_curvilinear: projection did not converge");
  }
  const auto [cx, cy] = centreline_position(s);
  const double th = heading_at(s);
  CurvilinearPose out;
  out.s = s;
  out.y = -(x - cx) * std::sin(th) + (y - cy) * std::cos(th);
  out.xi = wrap_angle(psi - th);
  // Reject projections that are not actually orthogonal (point beyond an end
  // of the map or outside the corridor's validity region).
  const double resid = (x - cx) * std::cos(th) + (y - cy) * std::sin(th);
  if (std::abs(resid) > 1e-6) {
    throw std::runtime_error("global_to_curvilinear: no orthogonal foot point in range");
  }
  return out;
}

RoadMap RoadMap::fit_from_polyline(
  const std::vector<std::pair<double, double>> & points, const std::vector<double> & left_widths,
  const std::vector<double> & right_widths)
{
  const std::size_t n = points.size();
  if (n < 8) {
    throw std::invalid_argument("fit_from_polyline: need at least 8 points");
  }
  if (left_widths.size() != n || right_widths.size() != n) {
    throw std::invalid_argument("fit_from_polyline: one corridor width pair per point");
  }

  // Cumulative arc length via chords.
  std::vector<double> arc(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    const double dx = points[i].first - points[i - 1].first;
    const double dy = points[i].second - points[i - 1].second;
    const double c = std::hypot(dx, dy);
    if (c < 1e-9) {
      throw std::invalid_argument("fit_from_polyline: duplicate points");
    }
    arc[i] = arc[i - 1] + c;
  }

  // Tangent angles by central differences, unwrapped.
  std::vector<double> angle(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t a = (i == 0) ? 0 : i - 1;
    const std::size_t b = (i + 1 == n) ? i : i + 1;
    angle[i] = std::atan2(
      points[b].second - points[a].second, points[b].first - points[a].first);
  }
  for (std::size_t i = 1; i < n; ++i) {
    double d = angle[i] - angle[i - 1];
    while (d > M_PI) d -= 2.0 * M_PI;
    while (d < -M_PI) d += 2.0 * M_PI;
    if (std::abs(d) > 0.5 * M_PI) {
      throw std::invalid_argument("fit_from_polyline: angle unwrap failed (kink in polyline)");
    }
    angle[i] = angle[i - 1] + d;
  }

  const double total = arc.back();
  constexpr double kSegmentLength = 25.0;
  constexpr double kOverlap = 5.0;
  const int n_seg = std::max(1, static_cast<int>(std::ceil(total / kSegmentLength)));
  const double seg_len = total / n_seg;

  std::vector<CentrelineSegment> segments(n_seg);
  std::vector<BoundarySegment> boundaries(n_seg);

  auto fit_window = [&](double w_lo, double w_hi, double u0, const std::vector<double> & values,
                        const double * fixed_c0) -> std::array<double, 4> {
    std::vector<int> idx;
    for (std::size_t i = 0; i < n; ++i) {
      if (arc[i] >= w_lo - 1e-9 && arc[i] <= w_hi + 1e-9) idx.push_back(static_cast<int>(i));
    }
    if (idx.size() < 4) {
      throw std::invalid_argument("fit_from_polyline: too few samples in a fit window");
    }
    const int cols = fixed_c0 ? 3 : 4;
    Eigen::MatrixXd m(idx.size(), cols);
    Eigen::VectorXd rhs(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const double u = arc[idx[r]] - u0;
      double v = values[idx[r]];
      if (fixed_c0) {
        v -= *fixed_c0;
        m(r, 0) = u;
        m(r, 1) = u * u;
        m(r, 2) = u * u * u;
      } else {
        m(r, 0) = 1.0;
        m(r, 1) = u;
        m(r, 2) = u * u;
        m(r, 3) = u * u * u;
      }
      rhs(r) = v;
    }
    const Eigen::VectorXd sol = m.colPivHouseholderQr().solve(rhs);
    std::array<double, 4> c{};
    if (fixed_c0) {
      c = {*fixed_c0, sol(0), sol(1), sol(2)};
    } else {
      c = {sol(0), sol(1), sol(2), sol(3)};
    }
    return c;
  };

  double carry_theta = 0.0;
  double carry_left = 0.0;
  double carry_right = 0.0;
  for (int j = 0; j < n_seg; ++j) {
    const double a = j * seg_len;
    const double b = (j + 1 == n_seg) ? total : (j + 1) * seg_len;
    const double w_lo = std::max(0.0, a - 0.5 * kOverlap);
    const double w_hi = std::min(total, b + 0.5 * kOverlap);

    segments[j].s_start = a;
    segments[j].s_end = b;
    segments[j].theta =
      fit_window(w_lo, w_hi, a, angle, j > 0 ? &carry_theta : nullptr);

    std::vector<double> left_vals(n), right_vals(n);
    for (std::size_t i = 0; i < n; ++i) {
      left_vals[i] = left_widths[i];
      right_vals[i] = -right_widths[i];
    }
    boundaries[j].left = fit_window(w_lo, w_hi, a, left_vals, j > 0 ? &carry_left : nullptr);
    boundaries[j].right = fit_window(w_lo, w_hi, a, right_vals, j > 0 ? &carry_right : nullptr);

    carry_theta = eval_cubic(segments[j].theta, b - a);
    carry_left = eval_cubic(boundaries[j].left, b - a);
    carry_right = eval_cubic(boundaries[j].right, b - a);
  }
  segments.front().anchor_x = points.front().first;
  segments.front().anchor_y = points.front().second;

  // Fit quality gates.
  double theta_resid = 0.0;
  double width_resid = 0.0;
  double max_kappa = 0.0;
  double max_halfwidth = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int j = std::min(
      n_seg - 1, static_cast<int>(arc[i] / seg_len));
    const double u = arc[i] - segments[j].s_start;
    theta_resid = std::max(theta_resid, std::abs(eval_cubic(segments[j].theta, u) - angle[i]));
    width_resid = std::max(
      width_resid, std::abs(eval_cubic(boundaries[j].left, u) - left_widths[i]));
    width_resid = std::max(
      width_resid, std::abs(eval_cubic(boundaries[j].right, u) + right_widths[i]));
    max_kappa = std::max(max_kappa, std::abs(eval_cubic_derivative(segments[j].theta, u)));
    max_halfwidth = std::max(max_halfwidth, std::max(left_widths[i], right_widths[i]));
  }
  if (theta_resid > 0.02) {
    throw std::runtime_error("fit_from_polyline: centreline angle residual above 0.02 rad");
  }
  if (width_resid > 0.05) {
    throw std::runtime_error("fit_from_polyline: boundary residual above 0.05 m");
  }
  if (max_kappa * max_halfwidth >= 0.5) {
    throw std::invalid_argument("fit_from_polyline: corridor self-intersects (kappa*width)");
  }

  return RoadMap(std::move(segments), std::move(boundaries));
}

}  // namespace unmpc
