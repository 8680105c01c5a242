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

#ifndef TESTS__QP_TEST_UTILS_HPP_
#define TESTS__QP_TEST_UTILS_HPP_

#include <optional>
#include <random>
#include <vector>

#include "unmpc/qp_solver.hpp"

namespace unmpc::testing
{

/// Exhaustive active-set enumeration for small strictly convex QPs: every
/// finite-sided bound/row is tried as {inactive, at lower, at upper}; a
/// candidate whose equality-constrained optimum is primal feasible with
/// sign-correct multipliers is the optimum. Independent of the solver's
/// machinery (KKT systems solved by LU on the full saddle matrix).
struct EnumerationResult
{
  bool feasible{false};
  Eigen::VectorXd x;
  double objective{0.0};
};

inline EnumerationResult enumerate_qp(const DenseQp & qp)
{
  const int n = qp.n();
  const int m = qp.m();

  struct Entity
  {
    int index;       // bound: variable index; row: row index + n
    double lo, hi;   // bound values
  };
  std::vector<Entity> entities;
  for (int i = 0; i < n; ++i) {
    if (qp.lb[i] > -kQpInf || qp.ub[i] < kQpInf) {
      entities.push_back({i, qp.lb[i], qp.ub[i]});
    }
  }
  for (int r = 0; r < m; ++r) {
    if (qp.lba[r] > -kQpInf || qp.uba[r] < kQpInf) {
      entities.push_back({n + r, qp.lba[r], qp.uba[r]});
    }
  }
  const int ne = static_cast<int>(entities.size());

  const auto row_of = [&](int e) -> Eigen::VectorXd {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
    if (e < n) {
      v[e] = 1.0;
    } else {
      v = qp.a.row(e - n).transpose();
    }
    return v;
  };
  const auto value_of = [&](int e, const Eigen::VectorXd & x) {
    return e < n ? x[e] : qp.a.row(e - n).dot(x);
  };

  EnumerationResult best;
  std::vector<int> state(ne, 0);  // 0 inactive, 1 lower, 2 upper

  const double tol = 1e-8;
  while (true) {
    // Build the candidate active set.
    std::vector<int> act;
    std::vector<double> act_bound;
    std::vector<int> act_side;
    bool valid = true;
    for (int k = 0; k < ne; ++k) {
      if (state[k] == 1) {
        if (entities[k].lo <= -kQpInf) valid = false;
        act.push_back(entities[k].index);
        act_bound.push_back(entities[k].lo);
        act_side.push_back(-1);
      } else if (state[k] == 2) {
        if (entities[k].hi >= kQpInf) valid = false;
        act.push_back(entities[k].index);
        act_bound.push_back(entities[k].hi);
        act_side.push_back(+1);
      }
    }
    if (valid && static_cast<int>(act.size()) <= n) {
      const int na = static_cast<int>(act.size());
      Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + na, n + na);
      kkt.topLeftCorner(n, n) = qp.h;
      Eigen::VectorXd rhs(n + na);
      rhs.head(n) = -qp.g;
      for (int i = 0; i < na; ++i) {
        const Eigen::VectorXd ai = row_of(act[i]);
        kkt.block(0, n + i, n, 1) = -ai;
        kkt.block(n + i, 0, 1, n) = ai.transpose();
        rhs[n + i] = act_bound[i];
      }
      const Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
      if (lu.isInvertible()) {
        const Eigen::VectorXd sol = lu.solve(rhs);
        const Eigen::VectorXd x = sol.head(n);
        const Eigen::VectorXd mu = sol.tail(na);
        bool ok = true;
        for (int e = 0; e < n + m && ok; ++e) {
          const double v = value_of(e, x);
          const double lo = e < n ? qp.lb[e] : qp.lba[e - n];
          const double hi = e < n ? qp.ub[e] : qp.uba[e - n];
          if (v < lo - tol || v > hi + tol) ok = false;
        }
        for (int i = 0; i < na && ok; ++i) {
          if (act_side[i] < 0 && mu[i] < -tol) ok = false;
          if (act_side[i] > 0 && mu[i] > tol) ok = false;
        }
        if (ok) {
          const double obj = 0.5 * x.dot(qp.h * x) + qp.g.dot(x);
          if (!best.feasible || obj < best.objective - 1e-12) {
            best.feasible = true;
            best.objective = obj;
            best.x = x;
          }
        }
      }
    }
    // Next mixed-radix combination.
    int k = 0;
    while (k < ne) {
      if (++state[k] <= 2) break;
      state[k] = 0;
      ++k;
    }
    if (k == ne) break;
  }
  return best;
}

struct RandomQpSpec
{
  int n{4};
  int m{2};
  int max_finite_entities{9};  // keep 3^k enumerable
  bool force_some_active{true};
};

/// Random strictly convex QP, feasible by construction around a sample point.
inline DenseQp random_qp(std::mt19937_64 & rng, const RandomQpSpec & spec)
{
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  DenseQp qp;
  Eigen::MatrixXd mfac(spec.n, spec.n);
  for (int i = 0; i < spec.n; ++i)
    for (int j = 0; j < spec.n; ++j) mfac(i, j) = g(rng);
  qp.h = mfac.transpose() * mfac + 0.3 * Eigen::MatrixXd::Identity(spec.n, spec.n);
  qp.g.resize(spec.n);
  for (int i = 0; i < spec.n; ++i) qp.g[i] = 2.0 * g(rng);

  Eigen::VectorXd anchor(spec.n);
  for (int i = 0; i < spec.n; ++i) anchor[i] = 0.5 * g(rng);

  qp.lb = Eigen::VectorXd::Constant(spec.n, -kQpInf);
  qp.ub = Eigen::VectorXd::Constant(spec.n, kQpInf);
  qp.a.resize(spec.m, spec.n);
  qp.lba = Eigen::VectorXd::Constant(spec.m, -kQpInf);
  qp.uba = Eigen::VectorXd::Constant(spec.m, kQpInf);
  for (int r = 0; r < spec.m; ++r) {
    for (int j = 0; j < spec.n; ++j) qp.a(r, j) = g(rng);
  }

  int finite = 0;
  for (int i = 0; i < spec.n && finite + 1 < spec.max_finite_entities; ++i) {
    if (u01(rng) < 0.5) {
      const double slack = spec.force_some_active ? 0.05 + 0.6 * u01(rng) : 1.0;
      qp.lb[i] = anchor[i] - slack;
      qp.ub[i] = anchor[i] + slack * (0.5 + u01(rng));
      ++finite;
    }
  }
  for (int r = 0; r < spec.m && finite < spec.max_finite_entities; ++r) {
    const double v = qp.a.row(r).dot(anchor);
    const double roll = u01(rng);
    const double slack = 0.05 + 0.8 * u01(rng);
    if (roll < 0.4) {
      qp.uba[r] = v + slack;
    } else if (roll < 0.8) {
      qp.lba[r] = v - slack;
    } else {
      qp.lba[r] = v - slack;
      qp.uba[r] = v + 0.7 * slack;
    }
    ++finite;
  }
  return qp;
}

}  // namespace unmpc::testing

#endif  // TESTS__QP_TEST_UTILS_HPP_
