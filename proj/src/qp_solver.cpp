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

#include "unmpc/qp_solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace unmpc
{

void DenseQp::validate() const
{
  const int nv = n();
  const int mr = m();
  if (
    h.rows() != nv || h.cols() != nv || lb.size() != nv || ub.size() != nv || a.rows() != mr ||
    (mr > 0 && a.cols() != nv) || uba.size() != mr) {
    throw std::invalid_argument("DenseQp: inconsistent dimensions");
  }
  for (int i = 0; i < nv; ++i) {
    if (lb[i] > ub[i]) {
      throw std::invalid_argument("DenseQp: lb > ub");
    }
  }
  for (int r = 0; r < mr; ++r) {
    if (lba[r] > uba[r]) {
      throw std::invalid_argument("DenseQp: lba > uba");
    }
  }
}

void dump_qp(std::ostream & os, const DenseQp & qp)
{
  const Eigen::IOFormat fmt(Eigen::FullPrecision, Eigen::DontAlignCols, " ", "\n");
  os << "# n " << qp.n() << " m " << qp.m() << "\n";
  os << "H\n" << qp.h.format(fmt) << "\n";
  os << "g\n" << qp.g.transpose().format(fmt) << "\n";
  os << "lb\n" << qp.lb.transpose().format(fmt) << "\n";
  os << "ub\n" << qp.ub.transpose().format(fmt) << "\n";
  if (qp.m() > 0) {
    os << "A\n" << qp.a.format(fmt) << "\n";
    os << "lbA\n" << qp.lba.transpose().format(fmt) << "\n";
    os << "ubA\n" << qp.uba.transpose().format(fmt) << "\n";
  }
}

const char * to_string(QpStatus status)
{
  switch (status) {
    case QpStatus::kOptimal:
      return "optimal";
    case QpStatus::kMaxWorkingSetChanges:
      return "max_wsr";
    case QpStatus::kInfeasible:
      return "infeasible";
    case QpStatus::kBudgetExceeded:
      return "budget_exceeded";
  }
  return "unknown";
}

namespace
{

using Clock = std::chrono::steady_clock;

/// One working-set entry: entity < n is a variable bound, entity >= n is
/// general row entity - n.
struct WsEntry
{
  int entity;
  int side;  // -1 lower, +1 upper
  double bound;
};

class AsCore
{
public:
  AsCore(const DenseQp & qp, const ActiveSetSolver::Options & opts, Clock::time_point deadline)
  : qp_(qp), opts_(opts), deadline_(deadline), n_(qp.n()), m_(qp.m())
  {
    factorize_hessian();
    x_free_ = llt_.solve(-qp_.g);
  }

  int wsr_used() const { return wsr_; }

  QpSolution run(
    const ActivityVec * bound_state, const ActivityVec * row_state,
    const Eigen::VectorXd * x_init, bool allow_phase1);

  /// Feasible-point iteration from x on the current working set.
  QpSolution main_loop(Eigen::VectorXd x);

  /// Parametric homotopy from a previous optimal point (scaled space): the
  /// gradient and bounds move linearly from auxiliary data - constructed so
  /// the given point is optimal for them under the new matrices - to the new
  /// data, and the KKT point is tracked exactly, changing the working set
  /// only at path breakpoints. Returns false when the path breaks down
  /// (caller falls back to the feasible-point method).
  bool run_homotopy(
    const Eigen::VectorXd & x_prev, const Eigen::VectorXd & dual_prev,
    const ActivityVec & bound_state, const ActivityVec & row_state, QpSolution & out);

private:
  void factorize_hessian()
  {
    h_reg_ = qp_.h;
    if (opts_.hessian_shift > 0.0) {
      h_reg_ += (opts_.hessian_shift * h_reg_.trace() / std::max(1, n_)) *
                Eigen::MatrixXd::Identity(n_, n_);
    }
    double eps = 1e-8 * std::max(1.0, h_reg_.trace() / std::max(1, n_));
    for (int attempt = 0; attempt < 12; ++attempt) {
      llt_.compute(h_reg_);
      if (llt_.info() == Eigen::Success) {
        return;
      }
      h_reg_ += eps * Eigen::MatrixXd::Identity(n_, n_);
      eps *= 10.0;
    }
    throw std::invalid_argument("ActiveSetSolver: Hessian not positive definite");
  }

  double value(int e, const Eigen::VectorXd & x) const
  {
    return e < n_ ? x[e] : qp_.a.row(e - n_).dot(x);
  }
  double lower(int e) const { return e < n_ ? qp_.lb[e] : qp_.lba[e - n_]; }
  double upper(int e) const { return e < n_ ? qp_.ub[e] : qp_.uba[e - n_]; }

  Eigen::VectorXd entity_vector(int e) const
  {
    if (e < n_) {
      Eigen::VectorXd v = Eigen::VectorXd::Zero(n_);
      v[e] = 1.0;
      return v;
    }
    return qp_.a.row(e - n_).transpose();
  }

  bool in_working_set(int e) const
  {
    return std::any_of(ws_.begin(), ws_.end(), [e](const WsEntry & w) { return w.entity == e; });
  }

  Eigen::VectorXd kkt_solve(const Eigen::VectorXd & rhs) const
  {
    const int w = static_cast<int>(ws_.size());
    Eigen::VectorXd y =
      l_k_.topLeftCorner(w, w).triangularView<Eigen::Lower>().solve(rhs);
    return l_k_.topLeftCorner(w, w).triangularView<Eigen::Lower>().transpose().solve(y);
  }

  // Appends (entity, side) to the working set, handling linear dependence by
  // exchanging against an involved existing entry. Returns false when the
  // entry cannot be added at all. The Cholesky factor of the working-set
  // Schur complement is extended in O(w^2).
  bool add_entry(int entity, int side, int depth = 0)
  {
    const Eigen::VectorXd ae = entity_vector(entity);
    Eigen::VectorXd z = llt_.solve(ae);
    const int w = static_cast<int>(ws_.size());
    Eigen::VectorXd k_col(w);
    for (int i = 0; i < w; ++i) {
      k_col[i] = entity_vector(ws_[i].entity).dot(z);
    }
    const double diag = ae.dot(z);
    Eigen::VectorXd lz;
    double pivot = diag;
    if (w > 0) {
      lz = l_k_.topLeftCorner(w, w).triangularView<Eigen::Lower>().solve(k_col);
      pivot = diag - lz.squaredNorm();
    }
    if (pivot <= 1e-12 * std::max(1.0, diag)) {
      // Dependent direction: swap out an involved entry. Normally the one
      // with the largest coefficient; under Bland's rule (engaged while the
      // iteration stalls on a degenerate vertex) the lowest-index one, which
      // provably breaks exchange cycles.
      if (w == 0 || depth > 8) {
        return false;
      }
      const Eigen::VectorXd c = kkt_solve(k_col);
      const double c_max = c.cwiseAbs().maxCoeff();
      if (c_max < 1e-12) {
        return false;
      }
      int worst = -1;
      if (bland_mode_) {
        int lowest_entity = std::numeric_limits<int>::max();
        for (int i = 0; i < w; ++i) {
          if (std::abs(c[i]) >= 0.01 * c_max && ws_[i].entity < lowest_entity) {
            lowest_entity = ws_[i].entity;
            worst = i;
          }
        }
      } else {
        double worst_c = 0.0;
        for (int i = 0; i < w; ++i) {
          if (std::abs(c[i]) > worst_c + 1e-15) {
            worst_c = std::abs(c[i]);
            worst = i;
          }
        }
      }
      if (worst < 0) {
        return false;
      }
      remove_entry(worst);
      ++wsr_;
      return add_entry(entity, side, depth + 1);
    }

    ws_.push_back({entity, side, side < 0 ? lower(entity) : upper(entity)});
    if (z_mat_.cols() < w + 1) {
      const int cap = std::max(2 * (w + 1), 16);
      z_mat_.conservativeResize(n_, cap);
      l_k_.conservativeResize(cap, cap);
    }
    z_mat_.col(w) = z;
    l_k_.row(w).head(w) = lz.transpose();
    l_k_(w, w) = std::sqrt(pivot);
    return true;
  }

  // Recompute Z and the factor from scratch for the current working set
  // (recovers from accumulated drift). Returns false when the set is no
  // longer numerically independent.
  bool refresh_factorization()
  {
    const std::vector<WsEntry> entries = ws_;
    ws_.clear();
    z_mat_.resize(n_, std::max<std::size_t>(entries.size(), 1));
    l_k_.resize(entries.size() + 1, entries.size() + 1);
    bool ok = true;
    for (const WsEntry & e : entries) {
      ok = add_entry(e.entity, e.side) && ok;
    }
    return ok;
  }

  // Remove index idx: shrink Z and restore the factor's trailing block with a
  // rank-one Cholesky update (O((w-idx)^2)).
  void remove_entry(int idx)
  {
    const int w = static_cast<int>(ws_.size());
    const int tail = w - idx - 1;
    ws_.erase(ws_.begin() + idx);

    // The deleted column of L feeds the rank-one update of the trailing part.
    Eigen::VectorXd u = l_k_.col(idx).segment(idx + 1, tail);

    // Shift rows/cols up-left.
    for (int i = idx; i < w - 1; ++i) {
      z_mat_.col(i) = z_mat_.col(i + 1);
      l_k_.row(i).head(idx) = l_k_.row(i + 1).head(idx);
    }
    for (int i = 0; i < tail; ++i) {
      l_k_.row(idx + i).segment(idx, i + 1) = l_k_.row(idx + 1 + i).segment(idx + 1, i + 1);
    }

    // L22' L22'^T = L22 L22^T + u u^T via Givens-style updates.
    for (int i = 0; i < tail; ++i) {
      const double a = l_k_(idx + i, idx + i);
      const double b = u[i];
      const double r = std::hypot(a, b);
      const double ca = a / r;
      const double sb = b / r;
      l_k_(idx + i, idx + i) = r;
      for (int j = i + 1; j < tail; ++j) {
        const double lj = l_k_(idx + j, idx + i);
        l_k_(idx + j, idx + i) = ca * lj + sb * u[j];
        u[j] = ca * u[j] - sb * lj;
      }
    }
  }

  // Optimum over the affine face of the current working set, with one step of
  // iterative refinement on the multipliers.
  void eqp_solve(Eigen::VectorXd & x_eqp, Eigen::VectorXd & mu) const
  {
    const int w = static_cast<int>(ws_.size());
    if (w == 0) {
      x_eqp = x_free_;
      mu.resize(0);
      return;
    }
    Eigen::VectorXd rhs(w);
    for (int i = 0; i < w; ++i) {
      rhs[i] = ws_[i].bound - value(ws_[i].entity, x_free_);
    }
    mu = kkt_solve(rhs);
    // One refinement step against K reconstructed from the factor.
    const auto l = l_k_.topLeftCorner(w, w).triangularView<Eigen::Lower>();
    const Eigen::VectorXd k_mu = l * (l.transpose() * mu);
    mu += kkt_solve(rhs - k_mu);
    x_eqp = x_free_ + z_mat_.leftCols(w) * mu;
  }

  bool out_of_time() const
  {
    return Clock::now() > deadline_;
  }

  QpSolution finalize(
    const Eigen::VectorXd & x, const Eigen::VectorXd & mu, QpStatus status, bool feasible) const
  {
    QpSolution sol;
    sol.x = x;
    sol.status = status;
    sol.working_set_changes = wsr_;
    sol.best_feasible = feasible;
    sol.objective_trace = objective_trace_;
    sol.objective = 0.5 * x.dot(h_reg_ * x) + qp_.g.dot(x);
    sol.dual = Eigen::VectorXd::Zero(n_ + m_);
    for (int i = 0; i < static_cast<int>(ws_.size()); ++i) {
      if (mu.size() == static_cast<Eigen::Index>(ws_.size())) {
        sol.dual[ws_[i].entity] = mu[i];
      }
    }
    sol.bound_state.assign(n_, 0);
    sol.row_state.assign(m_, 0);
    for (const WsEntry & w : ws_) {
      if (w.entity < n_) {
        sol.bound_state[w.entity] = static_cast<std::int8_t>(w.side);
      } else {
        sol.row_state[w.entity - n_] = static_cast<std::int8_t>(w.side);
      }
    }

    // KKT residual relative to the problem scale.
    const double scale =
      std::max({1.0, h_reg_.lpNorm<Eigen::Infinity>(), qp_.g.lpNorm<Eigen::Infinity>()});
    Eigen::VectorXd stat = h_reg_ * x + qp_.g;
    stat -= sol.dual.head(n_);
    if (m_ > 0) {
      stat -= qp_.a.transpose() * sol.dual.tail(m_);
    }
    double viol = 0.0;
    for (int e = 0; e < n_ + m_; ++e) {
      const double v = value(e, x);
      viol = std::max(viol, std::max(lower(e) - v, v - upper(e)));
    }
    sol.kkt_residual = std::max(stat.lpNorm<Eigen::Infinity>(), viol) / scale;
    sol.best_feasible = feasible && viol <= std::max(100.0 * opts_.feas_tol, 1e-7);
    return sol;
  }

  // Phase 1: minimize slack on the violated rows from the clamped start.
  // Returns true when a feasible x was produced (written in place). Warm
  // activity from the caller keeps the restoration on the previous face.
  bool phase1(
    Eigen::VectorXd & x, QpStatus & fail_status, const ActivityVec * warm_bounds,
    const ActivityVec * warm_rows);

  const DenseQp & qp_;
  const ActiveSetSolver::Options & opts_;
  Clock::time_point deadline_;
  int n_;
  int m_;
  int wsr_{0};

  Eigen::MatrixXd h_reg_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd x_free_;

  std::vector<WsEntry> ws_;
  Eigen::MatrixXd z_mat_;  // H^-1 a_e per working-set column
  Eigen::MatrixXd l_k_;  // Cholesky factor of A_W H^-1 A_W', maintained incrementally
  std::vector<double> objective_trace_;
  bool bland_mode_{false};  // least-index anti-cycling, engaged on stalls
  int zero_steps_{0};
};

QpSolution AsCore::run(
  const ActivityVec * bound_state, const ActivityVec * row_state, const Eigen::VectorXd * x_init,
  bool allow_phase1)
{
  // Feasible-with-respect-to-bounds start.
  Eigen::VectorXd x = x_init ? *x_init : x_free_;
  for (int i = 0; i < n_; ++i) {
    x[i] = std::clamp(x[i], qp_.lb[i], qp_.ub[i]);
  }

  // Requested initial working set: snap bound entries exactly, keep row
  // entries whose side still has a finite bound.
  std::vector<std::pair<int, int>> seed;
  if (bound_state) {
    for (int i = 0; i < n_ && i < static_cast<int>(bound_state->size()); ++i) {
      const int st = (*bound_state)[i];
      if (st < 0 && qp_.lb[i] > -kQpInf) {
        x[i] = qp_.lb[i];
        seed.emplace_back(i, -1);
      } else if (st > 0 && qp_.ub[i] < kQpInf) {
        x[i] = qp_.ub[i];
        seed.emplace_back(i, +1);
      }
    }
  } else if (!x_init) {
    // Cold start from the clamped free optimum: bounds that clamp are the
    // natural initial guesses.
    for (int i = 0; i < n_; ++i) {
      if (x_free_[i] <= qp_.lb[i] && qp_.lb[i] > -kQpInf) {
        seed.emplace_back(i, -1);
      } else if (x_free_[i] >= qp_.ub[i] && qp_.ub[i] < kQpInf) {
        seed.emplace_back(i, +1);
      }
    }
  }
  if (row_state) {
    for (int r = 0; r < m_ && r < static_cast<int>(row_state->size()); ++r) {
      const int st = (*row_state)[r];
      if (st < 0 && qp_.lba[r] > -kQpInf) {
        seed.emplace_back(n_ + r, -1);
      } else if (st > 0 && qp_.uba[r] < kQpInf) {
        seed.emplace_back(n_ + r, +1);
      }
    }
  }

  // General-row feasibility of the start point.
  double max_viol = 0.0;
  for (int r = 0; r < m_; ++r) {
    const double v = qp_.a.row(r).dot(x);
    max_viol = std::max(max_viol, std::max(qp_.lba[r] - v, v - qp_.uba[r]));
  }
  if (max_viol > opts_.feas_tol && allow_phase1) {
    QpStatus fail_status = QpStatus::kInfeasible;
    if (!phase1(x, fail_status, bound_state, row_state)) {
      QpSolution sol = finalize(x, Eigen::VectorXd(), fail_status, false);
      return sol;
    }
    // Reseed from whatever the restoration left active: its terminal face is
    // usually the optimal one.
    seed.clear();
    max_viol = 0.0;
    for (int i = 0; i < n_; ++i) {
      const double tol = 1e-7 * std::max(1.0, std::abs(x[i]));
      if (qp_.lb[i] > -kQpInf && x[i] <= qp_.lb[i] + tol) {
        x[i] = qp_.lb[i];
        seed.emplace_back(i, -1);
      } else if (qp_.ub[i] < kQpInf && x[i] >= qp_.ub[i] - tol) {
        x[i] = qp_.ub[i];
        seed.emplace_back(i, +1);
      }
    }
    for (int r = 0; r < m_; ++r) {
      const double v = qp_.a.row(r).dot(x);
      max_viol = std::max(max_viol, std::max(qp_.lba[r] - v, v - qp_.uba[r]));
      const double tol = 1e-7 * std::max(1.0, std::abs(v));
      if (qp_.lba[r] > -kQpInf && std::abs(v - qp_.lba[r]) <= tol) {
        seed.emplace_back(n_ + r, -1);
      } else if (qp_.uba[r] < kQpInf && std::abs(v - qp_.uba[r]) <= tol) {
        seed.emplace_back(n_ + r, +1);
      }
    }
  }
  if (max_viol > opts_.feas_tol) {
    // Marginally violated rows (phase-1 precision, or an inner restoration
    // pass) are forced active so the first equality-constrained step lands
    // exactly on them; working-set seeding below restores exact feasibility.
    for (int i = 0; i < n_; ++i) {
      if (x[i] <= qp_.lb[i] + opts_.feas_tol && qp_.lb[i] > -kQpInf) {
        x[i] = qp_.lb[i];
        seed.emplace_back(i, -1);
      } else if (x[i] >= qp_.ub[i] - opts_.feas_tol && qp_.ub[i] < kQpInf) {
        x[i] = qp_.ub[i];
        seed.emplace_back(i, +1);
      }
    }
    for (int r = 0; r < m_; ++r) {
      const double v = qp_.a.row(r).dot(x);
      if (v < qp_.lba[r] - opts_.feas_tol) {
        seed.emplace_back(n_ + r, -1);
      } else if (v > qp_.uba[r] + opts_.feas_tol) {
        seed.emplace_back(n_ + r, +1);
      }
    }
  }

  for (const auto & [entity, side] : seed) {
    if (!in_working_set(entity)) {
      add_entry(entity, side);  // seeding is free of WSR charges
    }
  }

  return main_loop(std::move(x));
}

QpSolution AsCore::main_loop(Eigen::VectorXd x)
{
  Eigen::VectorXd x_eqp;
  Eigen::VectorXd mu;
  bool at_face_optimum = false;

  while (true) {
    objective_trace_.push_back(0.5 * x.dot(h_reg_ * x) + qp_.g.dot(x));
    if (wsr_ >= opts_.max_wsr) {
      return finalize(x, mu, QpStatus::kMaxWorkingSetChanges, true);
    }
    if (out_of_time()) {
      return finalize(x, mu, QpStatus::kBudgetExceeded, true);
    }

    if (!at_face_optimum) {
      eqp_solve(x_eqp, mu);
      const Eigen::VectorXd p = x_eqp - x;
      const double p_norm = p.lpNorm<Eigen::Infinity>();
      if (p_norm > 1e-12 * std::max(1.0, x.lpNorm<Eigen::Infinity>())) {
        // Ratio test over entities outside the working set.
        double alpha = 1.0;
        int block_entity = -1;
        int block_side = 0;
        // Directions below the feasibility scale cannot accumulate a
        // meaningful violation over a unit step; treating them as blocking
        // only churns the working set with near-dependent rows.
        const double d_tol = 0.1 * opts_.feas_tol * std::max(1.0, p_norm);
        for (int e = 0; e < n_ + m_; ++e) {
          if (in_working_set(e)) continue;
          const double d = e < n_ ? p[e] : qp_.a.row(e - n_).dot(p);
          const double v = value(e, x);
          if (d > d_tol) {
            const double u = upper(e);
            if (u < kQpInf) {
              const double a = std::max(0.0, (u - v) / d);
              if (a < alpha - 1e-15) {
                alpha = a;
                block_entity = e;
                block_side = +1;
              }
            }
          } else if (d < -d_tol) {
            const double l = lower(e);
            if (l > -kQpInf) {
              const double a = std::max(0.0, (l - v) / d);
              if (a < alpha - 1e-15) {
                alpha = a;
                block_entity = e;
                block_side = -1;
              }
            }
          }
        }
        x += alpha * p;
        // A run of zero-length steps marks a degenerate vertex; Bland's
        // least-index selections provably escape it, at the cost of slower
        // ordinary progress, so the rule disengages after a real step.
        if (alpha > 1e-10) {
          zero_steps_ = 0;
          bland_mode_ = false;
        } else if (++zero_steps_ > 12) {
          bland_mode_ = true;
        }
        if (block_entity >= 0) {
          if (block_entity < n_) {
            x[block_entity] = block_side < 0 ? qp_.lb[block_entity] : qp_.ub[block_entity];
          }
          ++wsr_;
          bool added = add_entry(block_entity, block_side);
          if (!added) {
            // A genuine blocker of a nonzero step is independent of the
            // working set, so a failed add means factorization drift: rebuild
            // once, then give up rather than stall.
            refresh_factorization();
            added = add_entry(block_entity, block_side);
          }
          if (!added) {
            return finalize(x, mu, QpStatus::kMaxWorkingSetChanges, true);
          }
          continue;
        }
        x = x_eqp;
        at_face_optimum = true;
        continue;
      }
      at_face_optimum = true;
    }

    // Lagrange multiplier check on the face optimum. The threshold scales
    // with the gradient so knife-edge duals at noise level are left alone.
    const double dual_thresh = opts_.dual_tol * std::max(1.0, qp_.g.lpNorm<Eigen::Infinity>());
    int drop_idx = -1;
    if (bland_mode_) {
      int lowest_entity = std::numeric_limits<int>::max();
      for (int i = 0; i < static_cast<int>(ws_.size()); ++i) {
        const WsEntry & w = ws_[i];
        if (upper(w.entity) - lower(w.entity) < 1e-14) {
          continue;
        }
        const double bad = w.side < 0 ? -mu[i] : mu[i];
        if (bad > dual_thresh && w.entity < lowest_entity) {
          lowest_entity = w.entity;
          drop_idx = i;
        }
      }
    } else {
      double worst = dual_thresh;
      for (int i = 0; i < static_cast<int>(ws_.size()); ++i) {
        const WsEntry & w = ws_[i];
        if (upper(w.entity) - lower(w.entity) < 1e-14) {
          continue;  // equality-like: dual sign free
        }
        const double bad = w.side < 0 ? -mu[i] : mu[i];
        if (bad > worst) {
          worst = bad;
          drop_idx = i;
        }
      }
    }
    if (drop_idx < 0) {
      return finalize(x, mu, QpStatus::kOptimal, true);
    }
    ++wsr_;
    remove_entry(drop_idx);
    at_face_optimum = false;
  }
}

bool AsCore::run_homotopy(
  const Eigen::VectorXd & x_prev, const Eigen::VectorXd & dual_prev,
  const ActivityVec & bound_state, const ActivityVec & row_state, QpSolution & out)
{
  // Working set from the previous activity; entries the factorization
  // rejects are simply left out (their duals start at zero).
  Eigen::VectorXd x = x_prev;
  std::vector<double> lambda;
  for (int i = 0; i < n_; ++i) {
    if (bound_state[i] != 0 && add_entry(i, bound_state[i])) {
      const double lam = dual_prev[i];
      lambda.push_back(bound_state[i] < 0 ? std::max(0.0, lam) : std::min(0.0, lam));
    }
  }
  for (int r = 0; r < m_; ++r) {
    if (row_state[r] != 0 && add_entry(n_ + r, row_state[r])) {
      const double lam = dual_prev[n_ + r];
      lambda.push_back(row_state[r] < 0 ? std::max(0.0, lam) : std::min(0.0, lam));
    }
  }

  // Auxiliary start data: g0 makes (x, lambda) stationary under the new
  // matrices; bounds0 are the new bounds relaxed just enough to contain the
  // start point, with working-set sides exactly active.
  Eigen::VectorXd g0 = -(h_reg_ * x);
  for (std::size_t i = 0; i < ws_.size(); ++i) {
    g0 += lambda[i] * entity_vector(ws_[i].entity);
  }
  const Eigen::VectorXd dg = qp_.g - g0;

  // Per-entity moving bounds: value(tau) vs bound(tau), both affine.
  Eigen::VectorXd lo0(n_ + m_);
  Eigen::VectorXd hi0(n_ + m_);
  Eigen::VectorXd v_cur(n_ + m_);
  std::vector<std::int8_t> ws_side(n_ + m_, 0);
  for (const WsEntry & w : ws_) {
    ws_side[w.entity] = static_cast<std::int8_t>(w.side);
  }
  for (int e = 0; e < n_ + m_; ++e) {
    const double v = value(e, x);
    v_cur[e] = v;
    lo0[e] = lower(e) > -kQpInf ? std::min(lower(e), v) : -kQpInf;
    hi0[e] = upper(e) < kQpInf ? std::max(upper(e), v) : kQpInf;
    if (ws_side[e] < 0) {
      lo0[e] = v;
    } else if (ws_side[e] > 0) {
      hi0[e] = v;
    }
  }

  double tau = 0.0;
  Eigen::VectorXd dx(n_);
  while (true) {
    if (wsr_ >= opts_.max_wsr) {
      out = finalize(x, Eigen::VectorXd(), QpStatus::kMaxWorkingSetChanges, false);
      return true;
    }
    if (out_of_time()) {
      out = finalize(x, Eigen::VectorXd(), QpStatus::kBudgetExceeded, false);
      return true;
    }

    // Path direction on the current working set.
    const int w = static_cast<int>(ws_.size());
    const Eigen::VectorXd xf_dir = llt_.solve(-dg);
    Eigen::VectorXd dlam(w);
    if (w > 0) {
      Eigen::VectorXd rhs(w);
      for (int i = 0; i < w; ++i) {
        const int e = ws_[i].entity;
        const double db =
          ws_[i].side < 0 ? (e < n_ ? qp_.lb[e] : qp_.lba[e - n_]) - lo0[e]
                          : (e < n_ ? qp_.ub[e] : qp_.uba[e - n_]) - hi0[e];
        rhs[i] = db - value(ws_[i].entity, xf_dir);
      }
      dlam = kkt_solve(rhs);
      dx = xf_dir + z_mat_.leftCols(w) * dlam;
    } else {
      dx = xf_dir;
    }

    // Longest step along tau before a constraint blocks or a dual crosses 0.
    double step = 1.0 - tau;
    int block_entity = -1;
    int block_side = 0;
    int drop_idx = -1;
    for (int e = 0; e < n_ + m_; ++e) {
      if (ws_side[e] != 0) continue;
      const double dv = e < n_ ? dx[e] : qp_.a.row(e - n_).dot(dx);
      if (hi0[e] < kQpInf) {
        const double dhi = upper(e) - hi0[e];
        const double rate = dv - dhi;  // d/dtau of (value - upper)
        const double slack = hi0[e] + tau * dhi - v_cur[e];
        if (rate > 1e-12 && slack < step * rate) {
          step = std::max(0.0, slack / rate);
          block_entity = e;
          block_side = +1;
        }
      }
      if (lo0[e] > -kQpInf) {
        const double dlo = lower(e) - lo0[e];
        const double rate = dlo - dv;  // d/dtau of (lower - value)
        const double slack = v_cur[e] - (lo0[e] + tau * dlo);
        if (rate > 1e-12 && slack < step * rate) {
          step = std::max(0.0, slack / rate);
          block_entity = e;
          block_side = -1;
        }
      }
    }
    for (int i = 0; i < w; ++i) {
      const double lam = lambda[i];
      const double rate = ws_[i].side < 0 ? -dlam[i] : dlam[i];  // toward violation
      const double margin = ws_[i].side < 0 ? lam : -lam;        // >= 0
      if (rate > 1e-12 && margin < step * rate) {
        step = std::max(0.0, margin / rate);
        block_entity = -1;
        drop_idx = i;
      }
    }

    // Advance the point, duals and values.
    x += step * dx;
    for (int e = 0; e < n_ + m_; ++e) {
      v_cur[e] += step * (e < n_ ? dx[e] : qp_.a.row(e - n_).dot(dx));
    }
    for (int i = 0; i < w; ++i) {
      lambda[i] += step * dlam[i];
    }
    tau += step;

    if (drop_idx >= 0) {
      ws_side[ws_[drop_idx].entity] = 0;
      remove_entry(drop_idx);
      lambda.erase(lambda.begin() + drop_idx);
      ++wsr_;
      continue;
    }
    if (block_entity >= 0) {
      if (!add_entry(block_entity, block_side)) {
        return false;  // dependent blocker: let the caller fall back
      }
      // An exchange may have evicted an entry; rebuild the bookkeeping.
      if (static_cast<int>(lambda.size()) + 1 != static_cast<int>(ws_.size())) {
        return false;
      }
      ws_side[block_entity] = static_cast<std::int8_t>(block_side);
      lambda.push_back(0.0);
      ++wsr_;
      continue;
    }

    // tau reached 1: polish on the final face and hand over to the dual
    // check of the feasible-point method for the exact finish.
    break;
  }

  // tau = 1: polish onto the exact face optimum and finish with the
  // feasible-point dual checks (normally 0 further changes).
  Eigen::VectorXd mu;
  Eigen::VectorXd x_eqp;
  eqp_solve(x_eqp, mu);
  if ((x_eqp - x).lpNorm<Eigen::Infinity>() >
      1e-5 * std::max(1.0, x.lpNorm<Eigen::Infinity>())) {
    return false;  // detectable drift: fall back
  }
  out = main_loop(std::move(x_eqp));
  return true;
}

bool AsCore::phase1(
  Eigen::VectorXd & x, QpStatus & fail_status, const ActivityVec * warm_bounds,
  const ActivityVec * warm_rows)
{
  // Exact-penalty restoration: minimize the true objective plus M * sum(s)
  // (and a small quadratic on s for strict convexity) over the rows violated
  // at the start, each relaxed on its violated side by a slack s >= 0. Once M
  // exceeds the optimal multipliers the slack optimum is exactly zero for
  // feasible problems, so conditioning never has to be traded against bias;
  // a slack that survives the M escalation certifies infeasibility.
  const auto max_violation = [this](const Eigen::VectorXd & xv) {
    double worst = 0.0;
    for (int r = 0; r < m_; ++r) {
      const double v = qp_.a.row(r).dot(xv);
      worst = std::max(worst, std::max(qp_.lba[r] - v, v - qp_.uba[r]));
    }
    return worst;
  };

  const double sigma = std::max(1.0, qp_.h.trace() / std::max(1, n_));
  double penalty = 1e4 * std::max({1.0, qp_.g.lpNorm<Eigen::Infinity>(), sigma});
  for (int round = 0; round < 3; ++round) {
    // The violated set is rebuilt per round: each escalation starts from the
    // previous optimum, which may sit marginally outside a different set of
    // rows.
    std::vector<int> violated;
    std::vector<int> viol_side;  // -1 below lba, +1 above uba
    for (int r = 0; r < m_; ++r) {
      const double v = qp_.a.row(r).dot(x);
      if (qp_.lba[r] - v > opts_.feas_tol) {
        violated.push_back(r);
        viol_side.push_back(-1);
      } else if (v - qp_.uba[r] > opts_.feas_tol) {
        violated.push_back(r);
        viol_side.push_back(+1);
      }
    }
    const int nv = static_cast<int>(violated.size());
    const int n1 = n_ + nv;

    DenseQp aux;
    aux.h = Eigen::MatrixXd::Zero(n1, n1);
    aux.h.topLeftCorner(n_, n_) = h_reg_;
    aux.h.bottomRightCorner(nv, nv) = sigma * Eigen::MatrixXd::Identity(nv, nv);
    aux.g = Eigen::VectorXd::Zero(n1);
    aux.g.head(n_) = qp_.g;
    aux.g.tail(nv).setConstant(penalty);
    aux.lb = Eigen::VectorXd::Constant(n1, -kQpInf);
    aux.ub = Eigen::VectorXd::Constant(n1, kQpInf);
    aux.lb.head(n_) = qp_.lb;
    aux.ub.head(n_) = qp_.ub;
    aux.lb.tail(nv).setZero();

    aux.a = Eigen::MatrixXd::Zero(m_ + nv, n1);
    aux.lba = Eigen::VectorXd::Constant(m_ + nv, -kQpInf);
    aux.uba = Eigen::VectorXd::Constant(m_ + nv, kQpInf);
    aux.a.topLeftCorner(m_, n_) = qp_.a;
    aux.lba.head(m_) = qp_.lba;
    aux.uba.head(m_) = qp_.uba;
    Eigen::VectorXd x1(n1);
    x1.head(n_) = x;
    for (int k = 0; k < nv; ++k) {
      const int r = violated[k];
      // Relax the violated side of row r through slack k; the untouched side
      // stays on the original row. The extra row carries the relaxed side.
      aux.a.row(m_ + k).head(n_) = qp_.a.row(r);
      aux.a(m_ + k, n_ + k) = viol_side[k] < 0 ? 1.0 : -1.0;
      if (viol_side[k] < 0) {
        aux.lba[m_ + k] = qp_.lba[r];
        aux.lba[r] = -kQpInf;  // original row keeps only its upper side
      } else {
        aux.uba[m_ + k] = qp_.uba[r];
        aux.uba[r] = kQpInf;
      }
      const double v = qp_.a.row(r).dot(x);
      const double gap = viol_side[k] < 0 ? qp_.lba[r] - v : v - qp_.uba[r];
      x1[n_ + k] = std::max(gap, 0.0) * (1.0 + 1e-9) + 10.0 * opts_.feas_tol;
    }

    ActiveSetSolver::Options aux_opts = opts_;
    aux_opts.max_wsr = opts_.max_wsr - wsr_;
    AsCore core(aux, aux_opts, deadline_);
    // Seed the caller's warm activity plus the relaxed rows: the penalty
    // drives every slack against its row, so those end up active at the
    // restoration optimum, and the rest of the face usually survives.
    ActivityVec aux_bounds(static_cast<std::size_t>(n1), 0);
    ActivityVec aux_rows(static_cast<std::size_t>(m_ + nv), 0);
    if (warm_bounds) {
      for (int i = 0; i < n_ && i < static_cast<int>(warm_bounds->size()); ++i) {
        aux_bounds[i] = (*warm_bounds)[i];
      }
    }
    if (warm_rows) {
      for (int r = 0; r < m_ && r < static_cast<int>(warm_rows->size()); ++r) {
        aux_rows[r] = (*warm_rows)[r];
      }
    }
    for (int k = 0; k < nv; ++k) {
      const int r = violated[k];
      // The relaxed side no longer exists on the original row.
      if (aux_rows[r] == viol_side[k]) {
        aux_rows[r] = 0;
      }
      aux_rows[m_ + k] = static_cast<std::int8_t>(viol_side[k]);
    }
    const QpSolution sol = core.run(&aux_bounds, &aux_rows, &x1, false);
    wsr_ += core.wsr_used();
    if (sol.status != QpStatus::kOptimal) {
      fail_status = sol.status;
      return false;
    }
    x = sol.x.head(n_);
    // An exact-penalty optimum has zero slack up to solver precision; the
    // main loop pins any marginally active row exactly afterwards.
    if (max_violation(x) <= 100.0 * opts_.feas_tol) {
      return true;
    }
    penalty *= 1e3;
  }
  fail_status = QpStatus::kInfeasible;
  return false;
}

/// Symmetric Jacobi equilibration: x = s .* x_scaled with s_j from the
/// Hessian diagonal, so the scaled Hessian has a unit diagonal. Mixed
/// physical units (steering rates vs torque rates) otherwise put ten orders
/// of magnitude between Hessian eigenvalues and break the Schur
/// factorizations of the working set.
Eigen::VectorXd jacobi_scale(const DenseQp & qp, DenseQp & scaled)
{
  const int n = qp.n();
  Eigen::VectorXd s(n);
  const double max_diag = std::max(qp.h.diagonal().maxCoeff(), 1e-12);
  for (int j = 0; j < n; ++j) {
    s[j] = 1.0 / std::sqrt(std::max(qp.h(j, j), 1e-12 * max_diag));
  }

  scaled.h = s.asDiagonal() * qp.h * s.asDiagonal();
  scaled.g = s.cwiseProduct(qp.g);
  scaled.lb = qp.lb;
  scaled.ub = qp.ub;
  for (int j = 0; j < n; ++j) {
    if (qp.lb[j] > -kQpInf) {
      scaled.lb[j] = qp.lb[j] / s[j];
    }
    if (qp.ub[j] < kQpInf) {
      scaled.ub[j] = qp.ub[j] / s[j];
    }
  }
  scaled.a = qp.a * s.asDiagonal();
  scaled.lba = qp.lba;
  scaled.uba = qp.uba;
  return s;
}

/// Map a solution of the scaled problem back to the original variables and
/// recompute the certificates against the original data.
void unscale_solution(QpSolution & sol, const DenseQp & qp, const Eigen::VectorXd & s)
{
  const int n = qp.n();
  const int m = qp.m();
  sol.x = s.cwiseProduct(sol.x);
  for (int j = 0; j < n; ++j) {
    sol.dual[j] /= s[j];
  }
  sol.objective = 0.5 * sol.x.dot(qp.h * sol.x) + qp.g.dot(sol.x);

  const double scale =
    std::max({1.0, qp.h.lpNorm<Eigen::Infinity>(), qp.g.lpNorm<Eigen::Infinity>()});
  Eigen::VectorXd stat = qp.h * sol.x + qp.g;
  stat -= sol.dual.head(n);
  if (m > 0) {
    stat -= qp.a.transpose() * sol.dual.tail(m);
  }
  double viol = 0.0;
  for (int j = 0; j < n; ++j) {
    viol = std::max(viol, std::max(qp.lb[j] - sol.x[j], sol.x[j] - qp.ub[j]));
  }
  for (int r = 0; r < m; ++r) {
    const double v = qp.a.row(r).dot(sol.x);
    viol = std::max(viol, std::max(qp.lba[r] - v, v - qp.uba[r]));
  }
  sol.kkt_residual = std::max(stat.lpNorm<Eigen::Infinity>(), viol) / scale;
  sol.best_feasible = sol.best_feasible && viol <= 1e-6 * std::max(1.0, sol.x.lpNorm<Eigen::Infinity>());
}

Clock::time_point budget_deadline(const ActiveSetSolver::Options & opts)
{
  return std::isfinite(opts.budget_seconds)
           ? Clock::now() + std::chrono::duration_cast<Clock::duration>(
                              std::chrono::duration<double>(opts.budget_seconds))
           : Clock::time_point::max();
}

}  // namespace

QpSolution ActiveSetSolver::solve(const DenseQp & qp, const Options & opts)
{
  qp.validate();
  DenseQp scaled;
  const Eigen::VectorXd s = jacobi_scale(qp, scaled);
  AsCore core(scaled, opts, budget_deadline(opts));
  QpSolution sol = core.run(nullptr, nullptr, nullptr, true);
  unscale_solution(sol, qp, s);
  return sol;
}

QpSolution ActiveSetSolver::solve(
  const DenseQp & qp, const Options & opts, const ActivityVec & bound_state,
  const ActivityVec & row_state, const Eigen::VectorXd & x_init)
{
  qp.validate();
  if (x_init.size() != qp.n()) {
    throw std::invalid_argument("ActiveSetSolver: start point dimension mismatch");
  }
  DenseQp scaled;
  const Eigen::VectorXd s = jacobi_scale(qp, scaled);
  const Eigen::VectorXd x0 = x_init.cwiseQuotient(s);
  AsCore core(scaled, opts, budget_deadline(opts));
  QpSolution sol = core.run(&bound_state, &row_state, &x0, true);
  unscale_solution(sol, qp, s);
  return sol;
}

QpSolution ActiveSetSolver::hotstart(
  const DenseQp & qp, const Options & opts, const QpSolution & previous)
{
  if (
    static_cast<int>(previous.bound_state.size()) != qp.n() ||
    static_cast<int>(previous.row_state.size()) != qp.m()) {
    throw std::invalid_argument("hotstart: dimension change; cold solve required");
  }
  // Track the optimum along the data homotopy when the previous solve ended
  // optimal; the working-set changes then count path breakpoints only.
  if (
    previous.status == QpStatus::kOptimal && previous.x.size() == qp.n() &&
    previous.dual.size() == qp.n() + qp.m()) {
    qp.validate();
    DenseQp scaled;
    const Eigen::VectorXd s = jacobi_scale(qp, scaled);
    AsCore core(scaled, opts, budget_deadline(opts));
    Eigen::VectorXd x_scaled = previous.x.cwiseQuotient(s);
    Eigen::VectorXd dual_scaled = previous.dual;
    dual_scaled.head(qp.n()) = previous.dual.head(qp.n()).cwiseProduct(s);
    QpSolution sol;
    if (core.run_homotopy(x_scaled, dual_scaled, previous.bound_state, previous.row_state, sol)) {
      unscale_solution(sol, qp, s);
      return sol;
    }
  }
  return solve(qp, opts, previous.bound_state, previous.row_state, previous.x);
}

}  // namespace unmpc
