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

#include <algorithm>
#include <cmath>
#include <vector>

#include "gridshield/conic.hpp"
#include "gridshield/error.hpp"

namespace gs {

namespace {

using Vec = Eigen::VectorXd;
using Trip = Eigen::Triplet<double>;

// Branching state: 0 = free. For vertices the sign of the fixed value; for
// pairs +1 keeps `a` and zeroes `b`, -1 zeroes `a`.
struct Node {
  std::vector<signed char> vfix;
  std::vector<signed char> pfix;
};

void append(const SpMat& src, int row0, std::vector<Trip>& out) {
  for (int j = 0; j < src.outerSize(); ++j)
    for (SpMat::InnerIterator it(src, j); it; ++it) out.emplace_back(row0 + it.row(), it.col(), it.value());
}

class Relaxation {
 public:
  Relaxation(const LcpSystem& sys, const LcpOptions& o) : sys_(sys), o_(o) {
    n0_ = sys.lp.n;
    np_ = static_cast<int>(sys.pairs.size());
    nk_ = sys.cut.lhs >= 0 ? static_cast<int>(sys.cut.xi.size()) : 0;
    z0_ = n0_;
    w0_ = z0_ + (o.mode == LcpMode::kBigM ? np_ : 0);
    n_ = w0_ + nk_;
  }

  int n() const { return n_; }
  int z_index(int p) const { return z0_ + p; }

  ConicProblem build(const Node& node) const {
    const auto& lp = sys_.lp;
    ConicProblem q(n_);
    q.c.head(n0_) = -sys_.objective;
    q.lb = Vec::Constant(n_, -kInf);
    q.ub = Vec::Constant(n_, kInf);
    if (lp.lb.size()) q.lb.head(n0_) = lp.lb;
    if (lp.ub.size()) q.ub.head(n0_) = lp.ub;
    const double M = o_.big_m;

    std::vector<Trip> eq, le;
    append(lp.A_eq, 0, eq);
    std::vector<double> beq(lp.b_eq.data(), lp.b_eq.data() + lp.b_eq.size());
    append(lp.A_le, 0, le);
    std::vector<double> ble(lp.b_le.data(), lp.b_le.data() + lp.b_le.size());

    for (size_t v = 0; v < sys_.vertex_vars.size(); ++v) {
      if (node.vfix[v] == 0) continue;
      int i = sys_.vertex_vars[v];
      q.lb[i] = q.ub[i] = node.vfix[v];
    }
    for (int p = 0; p < np_; ++p) {
      auto [a, b] = sys_.pairs[p];
      if (o_.mode == LcpMode::kBigM) {
        int zi = z_index(p);
        q.lb[zi] = node.pfix[p] > 0 ? 1.0 : 0.0;
        q.ub[zi] = node.pfix[p] < 0 ? 0.0 : 1.0;
        int r = static_cast<int>(ble.size());
        le.emplace_back(r, a, 1.0);
        le.emplace_back(r, zi, -M);
        ble.push_back(0.0);
        le.emplace_back(r + 1, b, 1.0);
        le.emplace_back(r + 1, zi, M);
        ble.push_back(M);
      } else {
        q.ub[a] = std::min(q.ub[a], node.pfix[p] < 0 ? 0.0 : M);
        q.ub[b] = std::min(q.ub[b], node.pfix[p] > 0 ? 0.0 : M);
      }
    }
    if (nk_ > 0) {
      const auto& cut = sys_.cut;
      int r = static_cast<int>(ble.size());
      le.emplace_back(r, cut.lhs, 1.0);
      for (int k = 0; k < nk_; ++k) le.emplace_back(r, w0_ + k, -1.0);
      ble.push_back(0.0);
      for (int k = 0; k < nk_; ++k) {
        int w = w0_ + k;
        int xi = cut.xi[k];
        double fixed = std::abs(q.lb[xi] - q.ub[xi]) == 0.0 ? q.lb[xi] : 0.0;
        if (fixed != 0.0) {
          int re = static_cast<int>(beq.size());
          eq.emplace_back(re, w, 1.0);
          for (Eigen::SparseVector<double>::InnerIterator it(cut.rows[k]); it; ++it)
            eq.emplace_back(re, it.index(), -fixed * it.value());
          beq.push_back(0.0);
        } else {
          double U = cut.bound[k];
          int r1 = static_cast<int>(ble.size());
          le.emplace_back(r1, w, 1.0);
          le.emplace_back(r1, xi, U);
          le.emplace_back(r1 + 1, w, 1.0);
          le.emplace_back(r1 + 1, xi, -U);
          for (Eigen::SparseVector<double>::InnerIterator it(cut.rows[k]); it; ++it) {
            le.emplace_back(r1, it.index(), -it.value());
            le.emplace_back(r1 + 1, it.index(), it.value());
          }
          ble.push_back(U);
          ble.push_back(U);
        }
      }
    }
    q.A_eq.resize(static_cast<int>(beq.size()), n_);
    q.A_eq.setFromTriplets(eq.begin(), eq.end());
    q.b_eq = Eigen::Map<Vec>(beq.data(), static_cast<int>(beq.size()));
    q.A_le.resize(static_cast<int>(ble.size()), n_);
    q.A_le.setFromTriplets(le.begin(), le.end());
    q.b_le = Eigen::Map<Vec>(ble.data(), static_cast<int>(ble.size()));
    return q;
  }

 private:
  const LcpSystem& sys_;
  const LcpOptions& o_;
  int n0_ = 0, np_ = 0, nk_ = 0, z0_ = 0, w0_ = 0, n_ = 0;
};

}  // namespace

LcpResult solve_lcp(const LcpSystem& sys, const LcpOptions& o) {
  const auto& lp = sys.lp;
  if (sys.objective.size() != lp.n) throw Error(ErrorCode::kDimension, "lcp objective length mismatch");
  if (lp.P.nonZeros() != 0 || !lp.socs.empty())
    throw Error(ErrorCode::kInvalidArgument, "lcp linear part must be an LP");
  if (!(o.big_m > 0.0)) throw Error(ErrorCode::kInvalidArgument, "big_M must be positive");
  for (auto [a, b] : sys.pairs) {
    if (a < 0 || b < 0 || a >= lp.n || b >= lp.n) throw Error(ErrorCode::kDimension, "pair index out of range");
    if (lp.lb.size() == 0 || lp.lb[a] < 0.0 || lp.lb[b] < 0.0)
      throw Error(ErrorCode::kInvalidArgument, "complementary variables must be nonnegative");
  }
  if (sys.cut.lhs >= 0 && (sys.cut.rows.size() != sys.cut.xi.size() || sys.cut.bound.size() != sys.cut.xi.size()))
    throw Error(ErrorCode::kDimension, "cut arrays mismatch");

  Relaxation relax(sys, o);
  const size_t nv = sys.vertex_vars.size();
  const size_t np = sys.pairs.size();
  LcpResult res;
  std::vector<Node> stack;
  stack.push_back(Node{std::vector<signed char>(nv, 0), std::vector<signed char>(np, 0)});
  double incumbent = -kInf;
  bool hit_limit = false;
  bool unbounded = false;

  while (!stack.empty()) {
    if (res.nodes >= o.max_nodes) {
      hit_limit = true;
      break;
    }
    Node node = std::move(stack.back());
    stack.pop_back();
    ++res.nodes;
    Solution s = solve(relax.build(node), o.lp);
    if (s.status == SolveStatus::kInfeasible) continue;
    if (s.status == SolveStatus::kUnbounded) {
      unbounded = true;
      continue;
    }
    bool trusted = s.status == SolveStatus::kOptimal || (s.kkt.primal < 1e-6 && s.kkt.dual < 1e-6);
    double bound = trusted ? -s.primal_obj : kInf;
    double slack = 1e-9 * std::max(1.0, std::abs(incumbent));
    if (bound <= incumbent + slack) continue;

    // Branch on a vertex variable first.
    int vbranch = -1;
    double vworst = o.feas_tol;
    for (size_t v = 0; v < nv; ++v) {
      if (node.vfix[v] != 0) continue;
      double gap = 1.0 - std::abs(s.x[sys.vertex_vars[v]]);
      if (gap > vworst) {
        vworst = gap;
        vbranch = static_cast<int>(v);
      }
    }
    if (vbranch >= 0) {
      double val = s.x[sys.vertex_vars[vbranch]];
      signed char first = val >= 0.0 ? 1 : -1;
      Node a = node, b = node;
      a.vfix[vbranch] = static_cast<signed char>(-first);
      b.vfix[vbranch] = first;
      stack.push_back(std::move(a));
      stack.push_back(std::move(b));
      continue;
    }
    int pbranch = -1;
    double pworst = o.feas_tol * std::max(1.0, s.x.head(lp.n).lpNorm<Eigen::Infinity>());
    for (size_t p = 0; p < np; ++p) {
      if (node.pfix[p] != 0) continue;
      auto [ia, ib] = sys.pairs[p];
      double viol = std::min(s.x[ia], s.x[ib]);
      if (viol > pworst) {
        pworst = viol;
        pbranch = static_cast<int>(p);
      }
    }
    if (pbranch >= 0) {
      auto [ia, ib] = sys.pairs[pbranch];
      signed char first = s.x[ia] >= s.x[ib] ? 1 : -1;
      Node a = node, b = node;
      a.pfix[pbranch] = static_cast<signed char>(-first);
      b.pfix[pbranch] = first;
      stack.push_back(std::move(a));
      stack.push_back(std::move(b));
      continue;
    }
    if (!trusted) continue;
    incumbent = bound;
    res.v = s.x.head(lp.n);
    res.objective = bound;
  }

  if (unbounded) {
    res.status = SolveStatus::kUnbounded;
    res.objective = kInf;
  } else if (incumbent == -kInf) {
    res.status = hit_limit ? SolveStatus::kMaxIter : SolveStatus::kInfeasible;
  } else {
    res.status = hit_limit ? SolveStatus::kMaxIter : SolveStatus::kOptimal;
    const double edge = o.big_m * (1.0 - 1e-6);
    for (auto [a, b] : sys.pairs)
      if (res.v[a] >= edge || res.v[b] >= edge) res.big_m_too_small = true;
  }
  return res;
}

}  // namespace gs
