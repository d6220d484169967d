// Copyright 2026 The gridshield Authors
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

#pragma once

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "gridshield/conic.hpp"
#include "gridshield/sensing.hpp"

namespace gs::detail {

// Incremental assembly of a ConicProblem from row-wise triplets.
class ProblemBuilder {
 public:
  int add_vars(int k, double lo = -kInf, double hi = kInf) {
    int first = n_;
    n_ += k;
    lb_.resize(n_, lo);
    ub_.resize(n_, hi);
    c_.resize(n_, 0.0);
    return first;
  }
  int n() const { return n_; }
  void set_cost(int var, double v) { c_[var] = v; }
  void set_bounds(int var, double lo, double hi) {
    lb_[var] = lo;
    ub_[var] = hi;
  }
  void add_quad(int var, double v) { p_.emplace_back(var, var, v); }

  // sum coef * var = rhs
  int add_eq(const std::vector<std::pair<int, double>>& terms, double rhs) {
    int r = static_cast<int>(beq_.size());
    for (auto [v, a] : terms)
      if (a != 0.0) eq_.emplace_back(r, v, a);
    beq_.push_back(rhs);
    return r;
  }
  // sum coef * var <= rhs
  int add_le(const std::vector<std::pair<int, double>>& terms, double rhs) {
    int r = static_cast<int>(ble_.size());
    for (auto [v, a] : terms)
      if (a != 0.0) le_.emplace_back(r, v, a);
    ble_.push_back(rhs);
    return r;
  }
  void add_soc(std::vector<int> idx) { socs_.push_back(std::move(idx)); }

  // Appends A x[x0..] + sum_k a_k var[v_k + i] = rhs_i for every row i of A,
  // where (v_k, a_k) are the per-row extra terms.
  void add_eq_block(const SpMat& A, int x0, const std::vector<std::pair<int, double>>& per_row_extra_var_coef,
                    const Eigen::VectorXd& rhs) {
    const int r0 = static_cast<int>(beq_.size());
    for (int j = 0; j < A.outerSize(); ++j)
      for (SpMat::InnerIterator it(A, j); it; ++it) eq_.emplace_back(r0 + it.row(), x0 + it.col(), it.value());
    for (int i = 0; i < A.rows(); ++i) beq_.push_back(rhs[i]);
    for (int i = 0; i < A.rows(); ++i)
      for (auto [v0, a] : per_row_extra_var_coef) eq_.emplace_back(r0 + i, v0 + i, a);
  }

  ConicProblem build() const {
    ConicProblem p(n_);
    p.c = Eigen::Map<const Eigen::VectorXd>(c_.data(), n_);
    p.lb = Eigen::Map<const Eigen::VectorXd>(lb_.data(), n_);
    p.ub = Eigen::Map<const Eigen::VectorXd>(ub_.data(), n_);
    p.P.resize(n_, n_);
    p.P.setFromTriplets(p_.begin(), p_.end());
    p.A_eq.resize(static_cast<int>(beq_.size()), n_);
    p.A_eq.setFromTriplets(eq_.begin(), eq_.end());
    p.b_eq = Eigen::Map<const Eigen::VectorXd>(beq_.data(), static_cast<int>(beq_.size()));
    p.A_le.resize(static_cast<int>(ble_.size()), n_);
    p.A_le.setFromTriplets(le_.begin(), le_.end());
    p.b_le = Eigen::Map<const Eigen::VectorXd>(ble_.data(), static_cast<int>(ble_.size()));
    p.socs = socs_;
    return p;
  }

 private:
  int n_ = 0;
  std::vector<double> c_, lb_, ub_;
  std::vector<Eigen::Triplet<double>> p_, eq_, le_;
  std::vector<double> beq_, ble_;
  std::vector<std::vector<int>> socs_;
};

// Adds (c'x, D x) in C5 for each branch cone, with x at offset x0.
inline void add_branch_cones(ProblemBuilder& b, const std::vector<BranchCone>& cones, int x0) {
  const double r = 1.0 / std::numbers::sqrt2;
  for (const auto& k : cones) {
    int t = b.add_vars(5);
    b.add_eq({{t, 1.0}, {x0 + k.mg_i, -r}, {x0 + k.mg_j, -r}}, 0.0);
    b.add_eq({{t + 1, 1.0}, {x0 + k.mg_i, -r}}, 0.0);
    b.add_eq({{t + 2, 1.0}, {x0 + k.mg_j, -r}}, 0.0);
    b.add_eq({{t + 3, 1.0}, {x0 + k.re, -1.0}}, 0.0);
    b.add_eq({{t + 4, 1.0}, {x0 + k.im, -1.0}}, 0.0);
    b.add_soc({t, t + 1, t + 2, t + 3, t + 4});
  }
}

}  // namespace gs::detail
