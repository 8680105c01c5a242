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

#include "unmpc/road_map.hpp"

using namespace unmpc;

namespace
{

std::vector<std::pair<double, double>> sample_arc(
  double radius, double angle_span, double spacing, double start_angle = -M_PI / 2.0)
{
  std::vector<std::pair<double, double>> pts;
  const double cx = 0.0;
  const double cy = radius;
  const int n = static_cast<int>(radius * angle_span / spacing) + 1;
  for (int i = 0; i <= n; ++i) {
    const double a = start_angle + angle_span * i / n;
    pts.emplace_back(cx + radius * std::cos(a), cy + radius * std::sin(a));
  }
  return pts;
}

}  // namespace

TEST_CASE("heading and curvature on simple segments")
{
  auto straight = RoadMap::straight(200.0, 3.5, -3.5);
  CHECK(straight.heading_at(50.0) == 0.0);
  CHECK(straight.curvature_at(50.0) == 0.0);
  CHECK(straight.length() == 200.0);
  CHECK_THROWS_AS(straight.heading_at(-1.0), std::out_of_range);
  CHECK_THROWS_AS(straight.heading_at(201.0), std::out_of_range);

  // Linear angle = constant curvature.
  CentrelineSegment seg;
  seg.s_start = 0.0;
  seg.s_end = 100.0;
  seg.theta = {0.0, 0.02, 0.0, 0.0};
  BoundarySegment bnd;
  bnd.left = {3.5, 0.0, 0.0, 0.0};
  bnd.right = {-3.5, 0.0, 0.0, 0.0};
  RoadMap arc({seg}, {bnd});
  CHECK(arc.curvature_at(0.0) == doctest::Approx(0.02));
  CHECK(arc.curvature_at(77.0) == doctest::Approx(0.02));
  CHECK(arc.heading_at(50.0) == doctest::Approx(1.0));
}

TEST_CASE("curvature equals a finite difference of heading")
{
  CentrelineSegment seg;
  seg.s_start = 0.0;
  seg.s_end = 120.0;
  seg.theta = {0.1, 0.004, -3e-5, 1e-7};
  BoundarySegment bnd;
  bnd.left = {4.0, 0.001, 0.0, 0.0};
  bnd.right = {-4.0, 0.0, 0.0, 0.0};
  RoadMap map({seg}, {bnd});
  for (double s = 1.0; s < 119.0; s += 7.3) {
    const double fd = (map.heading_at(s + 1e-4) - map.heading_at(s - 1e-4)) / 2e-4;
    CHECK(map.curvature_at(s) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("boundaries evaluate their cubics")
{
  auto straight = RoadMap::straight(100.0, 3.5, -3.5);
  auto [left, right] = straight.boundaries_at(10.0);
  CHECK(left == 3.5);
  CHECK(right == -3.5);

  // Lane widening encoded with a linear term.
  CentrelineSegment seg;
  seg.s_start = 0.0;
  seg.s_end = 100.0;
  BoundarySegment bnd;
  bnd.left = {3.5, 0.01, 0.0, 0.0};
  bnd.right = {-3.5, 0.0, 0.0, 0.0};
  RoadMap widening({seg}, {bnd});
  CHECK(widening.boundaries_at(50.0).first == doctest::Approx(4.0));
  CHECK(widening.boundary_slopes_at(50.0).first == doctest::Approx(0.01));

  // Degenerate corridor rejected.
  BoundarySegment bad;
  bad.left = {-1.0, 0.0, 0.0, 0.0};
  bad.right = {1.0, 0.0, 0.0, 0.0};
  CHECK_THROWS_AS(RoadMap({seg}, {bad}), std::invalid_argument);
}

TEST_CASE("curvilinear/global conversions on a straight road")
{
  auto map = RoadMap::straight(100.0, 3.5, -3.5);
  const GlobalPose g = map.curvilinear_to_global(10.0, 2.0, 0.0);
  CHECK(g.x == doctest::Approx(10.0));
  CHECK(g.y == doctest::Approx(2.0));
  CHECK(g.psi == doctest::Approx(0.0));

  const CurvilinearPose c = map.global_to_curvilinear(25.0, -1.0, 0.1);
  CHECK(c.s == doctest::Approx(25.0));
  CHECK(c.y == doctest::Approx(-1.0));
  CHECK(c.xi == doctest::Approx(0.1));
}

TEST_CASE("round-trip identity on random in-corridor poses")
{
  // A wavy two-segment road exercises the table integration and projection.
  CentrelineSegment s0;
  s0.s_start = 0.0;
  s0.s_end = 60.0;
  s0.theta = {0.0, 0.01, 2e-4, -2e-6};
  CentrelineSegment s1;
  s1.s_start = 60.0;
  s1.s_end = 140.0;
  const double th_end = 0.0 + 0.01 * 60 + 2e-4 * 3600 - 2e-6 * 216000;
  const double ka_end = 0.01 + 2.0 * 2e-4 * 60 - 3.0 * 2e-6 * 3600;
  s1.theta = {th_end, ka_end, -1e-4, 0.0};
  BoundarySegment b;
  b.left = {4.0, 0.0, 0.0, 0.0};
  b.right = {-4.0, 0.0, 0.0, 0.0};
  RoadMap map({s0, s1}, {b, b});

  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> us(1.0, 139.0);
  std::uniform_real_distribution<double> uy(-3.5, 3.5);
  std::uniform_real_distribution<double> uxi(-0.4, 0.4);
  for (int i = 0; i < 1000; ++i) {
    const double s = us(rng);
    const double y = uy(rng);
    const double xi = uxi(rng);
    const GlobalPose g = map.curvilinear_to_global(s, y, xi);
    const CurvilinearPose c = map.global_to_curvilinear(g.x, g.y, g.psi);
    CHECK(std::abs(c.s - s) < 1e-6);
    CHECK(std::abs(c.y - y) < 1e-6);
    CHECK(std::abs(c.xi - xi) < 1e-8);
  }
}

TEST_CASE("fit: collinear points give a single straight segment")
{
  std::vector<std::pair<double, double>> pts;
  std::vector<double> w;
  for (int i = 0; i < 12; ++i) {
    pts.emplace_back(2.0 * i, 0.0);
    w.push_back(3.5);
  }
  const RoadMap map = RoadMap::fit_from_polyline(pts, w, w);
  CHECK(map.segments().size() == 1);
  for (double s = 0.0; s < map.length(); s += 3.0) {
    CHECK(std::abs(map.heading_at(s)) < 1e-9);
    CHECK(std::abs(map.curvature_at(s)) < 1e-9);
  }
}

TEST_CASE("fit: sampled arcs recover their curvature")
{
  // Quarter arc, R = 30.
  {
    const auto pts = sample_arc(30.0, M_PI / 2.0, 1.0);
    std::vector<double> w(pts.size(), 3.0);
    const RoadMap map = RoadMap::fit_from_polyline(pts, w, w);
    for (double s = 2.0; s < map.length() - 2.0; s += 2.5) {
      CHECK(map.curvature_at(s) == doctest::Approx(1.0 / 30.0).epsilon(0.02));
    }
  }
  // R = 50 fitted arc: curvature ~ 0.02.
  {
    const auto pts = sample_arc(50.0, 1.2, 1.0);
    std::vector<double> w(pts.size(), 3.0);
    const RoadMap map = RoadMap::fit_from_polyline(pts, w, w);
    CHECK(map.curvature_at(0.5 * map.length()) == doctest::Approx(0.02).epsilon(0.02));
  }
}

TEST_CASE("fit: S-curve flips the curvature sign at the junction")
{
  // Tangent angle +s/r on the first half, then decreasing: integrate the
  // heading to build the polyline.
  const double r = 220.0;
  const double half_len = 35.0;
  const double ds = 0.5;
  std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
  double x = 0.0;
  double y = 0.0;
  for (double s = ds; s <= 2.0 * half_len + 1e-9; s += ds) {
    const double theta = s <= half_len ? s / r : (2.0 * half_len - s) / r;
    x += ds * std::cos(theta);
    y += ds * std::sin(theta);
    pts.emplace_back(x, y);
  }
  std::vector<double> w(pts.size(), 4.0);
  const RoadMap map = RoadMap::fit_from_polyline(pts, w, w);
  CHECK(map.curvature_at(5.0) > 0.5 / r);
  CHECK(map.curvature_at(map.length() - 5.0) < -0.5 / r);
}

TEST_CASE("fit: boundary cubics track per-point widths")
{
  const auto pts = sample_arc(60.0, 1.0, 1.0);
  std::vector<double> wl(pts.size());
  std::vector<double> wr(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    wl[i] = 3.5 + 0.01 * static_cast<double>(i);  // widening lane
    wr[i] = 3.0;
  }
  const RoadMap map = RoadMap::fit_from_polyline(pts, wl, wr);
  const auto [left, right] = map.boundaries_at(0.5 * map.length());
  CHECK(left == doctest::Approx(3.5 + 0.01 * pts.size() / 2.0).epsilon(0.02));
  CHECK(right == doctest::Approx(-3.0).epsilon(0.02));
  CHECK(left > right);
}

TEST_CASE("fit rejects degenerate input")
{
  std::vector<std::pair<double, double>> few = {{0, 0}, {1, 0}, {2, 0}};
  std::vector<double> w3(3, 3.0);
  CHECK_THROWS_AS(RoadMap::fit_from_polyline(few, w3, w3), std::invalid_argument);

  std::vector<std::pair<double, double>> dup;
  std::vector<double> w;
  for (int i = 0; i < 10; ++i) {
    dup.emplace_back(i * 0.5, 0.0);
    w.push_back(3.0);
  }
  dup[4] = dup[3];
  CHECK_THROWS_AS(RoadMap::fit_from_polyline(dup, w, w), std::invalid_argument);

  // A polyline that doubles back breaks the angle unwrap.
  std::vector<std::pair<double, double>> back = {
    {0.0, 0.0}, {1.0, 0.0}, {2.0, 0.0}, {3.0, 0.0},
    {2.5, 0.0}, {1.5, 0.0}, {0.5, 0.0}, {-0.5, 0.0}};
  std::vector<double> wb(back.size(), 3.0);
  CHECK_THROWS_AS(RoadMap::fit_from_polyline(back, wb, wb), std::invalid_argument);
}

TEST_CASE("fitted map keeps s monotone along the source polyline")
{
  const auto pts = sample_arc(45.0, 1.3, 0.8);
  std::vector<double> w(pts.size(), 3.5);
  const RoadMap map = RoadMap::fit_from_polyline(pts, w, w);
  double prev = -1.0;
  for (const auto & [x, y] : pts) {
    const CurvilinearPose c = map.global_to_curvilinear(x, y, 0.0);
    CHECK(c.s > prev - 1e-9);
    prev = c.s;
  }
}
