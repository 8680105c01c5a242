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

#ifndef UNMPC__QP_SOLVER_HPP_
#define UNMPC__QP_SOLVER_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <vector>

namespace unmpc
{

/// Bound treated as absent at or beyond this magnitude.
inline constexpr double kQpInf = 1e20;

/// min 1/2 x'Hx + g'x  s.t.  lb <= x <= ub,  lba <= Ax <= uba.
struct DenseQp
{
  Eigen::MatrixXd h;
  Eigen::VectorXd g;
  Eigen::VectorXd lb;
  Eigen::VectorXd ub;
  Eigen::MatrixXd a;
  Eigen::VectorXd lba;
  Eigen::VectorXd uba;

  int n() const { return static_cast<int>(g.size()); }
  int m() const { return static_cast<int>(lba.size()); }
  void validate() const;  // throws std::invalid_argument on shape/bound errors
};

/// Text dump for offline debugging: one named section per matrix/vector,
/// row-major decimal values.
void dump_qp(std::ostream & os, const DenseQp & qp);

enum class QpStatus : int {
  kOptimal = 0,
  kMaxWorkingSetChanges,
  kInfeasible,
  kBudgetExceeded
};

const char * to_string(QpStatus status);

/// Per-entity activity: -1 active at lower bound, 0 inactive, +1 at upper.
using ActivityVec = std::vector<std::int8_t>;

struct QpSolution
{
  Eigen::VectorXd x;
  Eigen::VectorXd dual;  // n bound duals then m row duals; >=0 lower, <=0 upper
  double objective{0.0};
  QpStatus status{QpStatus::kOptimal};
  int working_set_changes{0};
  double kkt_residual{0.0};
  bool best_feasible{false};  // on early exit: x satisfies all constraints

  // Warm-start snapshot of the final working set.
  ActivityVec bound_state;
  ActivityVec row_state;

  // Objective value at each main-loop iteration (diagnostic; non-increasing
  // from a feasible on-face start).
  std::vector<double> objective_trace;
};

/// Primal active-set solver for strictly convex dense QPs with a parametric
/// warm-start path. One instance per consumer; instances are independent.
///
/// Deterministic by construction: ties in the ratio test and in the dual
/// selection are broken toward the lowest entity index, so identical inputs
/// reproduce identical working-set sequences.
class ActiveSetSolver
{
public:
  struct Options
  {
    int max_wsr{200};
    double budget_seconds{std::numeric_limits<double>::infinity()};
    double feas_tol{1e-9};
    double dual_tol{1e-9};
    // Levenberg lift applied to the equilibrated Hessian (whose diagonal is
    // unit). Barely-penalized directions otherwise leave long flat valleys
    // that stall the active-set walk on condensed problems.
    double hessian_shift{0.0};
  };

  /// Cold solve. Finds a feasible point (Phase 1 when the clamped start
  /// violates general rows), then iterates working-set changes until the KKT
  /// conditions hold. Infeasibility is certified by a nonzero Phase-1 optimum.
  QpSolution solve(const DenseQp & qp, const Options & opts);

  /// Cold solve seeded with an initial working set.
  QpSolution solve(
    const DenseQp & qp, const Options & opts, const ActivityVec & bound_state,
    const ActivityVec & row_state, const Eigen::VectorXd & x_init);

  /// Parametric re-solve (same dimensions) starting from a previous solution.
  /// Reaches the same optimum as a cold solve, typically in far fewer
  /// working-set recalculations.
  QpSolution hotstart(const DenseQp & qp, const Options & opts, const QpSolution & previous);
};

}  // namespace unmpc

#endif  // UNMPC__QP_SOLVER_HPP_
