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

#ifndef UNMPC__SQP_RTI_HPP_
#define UNMPC__SQP_RTI_HPP_

#include <memory>
#include <optional>
#include <vector>

#include "unmpc/ocp.hpp"
#include "unmpc/qp_solver.hpp"

namespace unmpc
{

/// Hard rows of one shooting node, linearized at the iterate. Disabled rows
/// stay in the layout (inert bounds) so the QP dimensions never change and
/// hot starts remain valid across cycles.
struct StageConstraintEval
{
  Eigen::VectorXd soft;      // n_soft penalty values
  Eigen::MatrixXd soft_jac;  // n_soft x nx
  Eigen::VectorXd hard_val;  // n_hard row values at the linearization point
  Eigen::MatrixXd hard_jac;  // n_hard x nx
  Eigen::VectorXd hard_lb;   // bounds on the row value
  Eigen::VectorXd hard_ub;
  std::vector<std::uint8_t> enabled;
};

/// Model seam for the multiple-shooting transcription: discrete dynamics with
/// sensitivities plus per-node constraint/penalty evaluation.
class OcpModel
{
public:
  virtual ~OcpModel() = default;
  virtual int nx() const = 0;
  virtual int nu() const = 0;
  virtual int n_soft() const = 0;
  virtual int n_hard() const = 0;

  virtual void dynamics_step(
    const Eigen::VectorXd & x, const Eigen::VectorXd & u, Eigen::VectorXd & x_next,
    Eigen::MatrixXd & a, Eigen::MatrixXd & b) const = 0;

  virtual void stage_eval(int node, const Eigen::VectorXd & x, StageConstraintEval & out) const = 0;
};

/// Cost/weight/bound data consumed by the transcription. The running stage
/// cost is scaled by dt; the terminal cost applies p to the state deviation.
struct TranscriptionProblem
{
  int nodes{0};
  double dt{0.0};
  Eigen::VectorXd q;      // nx + n_soft running diagonal
  Eigen::VectorXd r;      // nu running diagonal
  Eigen::MatrixXd p;      // nx x nx terminal
  Eigen::MatrixXd h_ref;  // (nodes+1) x (nx + n_soft)
  Eigen::VectorXd u_lb;   // nu, absolute control bounds
  Eigen::VectorXd u_ub;
  const OcpModel * model{nullptr};
};

struct ShootingIterate
{
  Eigen::MatrixXd x;  // (nodes+1) x nx
  Eigen::MatrixXd u;  // nodes x nu
  bool feasible{true};

  int nodes() const { return static_cast<int>(u.rows()); }
};

/// Constant-state iterate with zero controls; when time_index >= 0 that state
/// entry advances by dt per node.
ShootingIterate make_constant_iterate(
  const Eigen::VectorXd & x0, int nodes, int nu, double dt, int time_index = -1);

/// Nodes moved one step earlier, last node duplicated with the last control
/// repeated; when time_index >= 0 the duplicated tail advances by dt.
ShootingIterate shift_iterate(const ShootingIterate & it, double dt, int time_index = -1);

/// Condensed QP over the stacked control corrections, parametric in the
/// initial-state deviation dx0 (nothing here depends on the measured state).
struct CondensedQp
{
  DenseQp qp;               // at dx0 = 0
  Eigen::VectorXd g0;       // base gradient
  Eigen::MatrixXd g_x0;     // n x nx gradient sensitivity to dx0
  Eigen::MatrixXd row_x0;   // m x nx row-value sensitivity to dx0
  Eigen::VectorXd lba0;     // row bounds at dx0 = 0
  Eigen::VectorXd uba0;
  std::vector<Eigen::MatrixXd> phi;    // per node: nx x nx
  std::vector<Eigen::MatrixXd> e_mat;  // per node: nx x (nodes*nu)
  std::vector<Eigen::VectorXd> d_vec;  // per node defect accumulation
  double defect_norm{0.0};             // max continuity defect of the iterate
};

struct FeedbackResult
{
  bool ok{false};
  Eigen::VectorXd u_apply;
  ShootingIterate iterate;
  QpStatus qp_status{QpStatus::kOptimal};
  int wsr{0};
  double qp_kkt{0.0};
  double kkt_residual{0.0};  // max of QP KKT and continuity defect
};

struct SqpIterationStats
{
  double prepare_seconds{0.0};
  double feedback_seconds{0.0};
  double kkt_residual{0.0};
  QpStatus qp_status{QpStatus::kOptimal};
  int wsr{0};
};

struct SqpCycleResult
{
  bool ok{false};
  Eigen::VectorXd u_apply;
  ShootingIterate iterate;
  std::vector<SqpIterationStats> iterations;
};

/// Gauss-Newton real-time iteration engine: preparation (sensitivities,
/// condensing) is independent of the measured state; the feedback phase
/// embeds it, solves the condensed QP (hot-started across calls) and applies
/// the full step. One engine per sub-planner; engines share nothing.
class RtiEngine
{
public:
  CondensedQp prepare(const ShootingIterate & iterate, const TranscriptionProblem & prob) const;

  FeedbackResult feedback(
    const CondensedQp & cqp, const ShootingIterate & iterate, const TranscriptionProblem & prob,
    const Eigen::VectorXd & x0, const ActiveSetSolver::Options & opts);

  SqpCycleResult sqp_cycle(
    ShootingIterate iterate, const TranscriptionProblem & prob, const Eigen::VectorXd & x0,
    int n_sqp, const ActiveSetSolver::Options & opts);

  void reset_hotstart() { last_solution_.reset(); }

  /// Realign the stored working set with a shifted iterate: active bounds and
  /// rows move one node-block earlier (the tail block repeats). Without this
  /// the warm start seeds every face one node off and re-walks the whole
  /// active set.
  void shift_hotstart(int nu, int n_hard);

private:
  ActiveSetSolver qp_;
  std::optional<QpSolution> last_solution_;
};

/// OcpModel over the single-track vehicle, the road map and one cycle's
/// OcpDefinition: implicit-midpoint dynamics, obstacle/boundary/velocity rows
/// with activation gating, and steer/torque state rows with the friction
/// ellipse window evaluated at the (lagged) iterate.
class VehicleOcpModel : public OcpModel
{
public:
  VehicleOcpModel(const VehicleParams & params, const RoadMap & road, const OcpDefinition & ocp);

  int nx() const override { return kNx; }
  int nu() const override { return kNu; }
  int n_soft() const override { return ocp_.n_soft(); }
  int n_hard() const override;

  void dynamics_step(
    const Eigen::VectorXd & x, const Eigen::VectorXd & u, Eigen::VectorXd & x_next,
    Eigen::MatrixXd & a, Eigen::MatrixXd & b) const override;

  void stage_eval(int node, const Eigen::VectorXd & x, StageConstraintEval & out) const override;

  /// Transcription view of the OcpDefinition backed by this model.
  TranscriptionProblem problem() const;

private:
  const VehicleParams & params_;
  const RoadMap & road_;
  const OcpDefinition & ocp_;
};

}  // namespace unmpc

#endif  // UNMPC__SQP_RTI_HPP_
