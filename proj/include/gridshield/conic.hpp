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

#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace gs {

using SpMat = Eigen::SparseMatrix<double>;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

// minimize 1/2 x'Px + c'x
// s.t.     A_eq x = b_eq, A_le x <= b_le, lb <= x <= ub,
//          x[t] >= ||x[u_1..u_d]|| for every cone (t, u_1..u_d).
// P may be empty (LP) and is read from its upper triangle.
struct ConicProblem {
  int n = 0;
  SpMat P;
  Eigen::VectorXd c;
  SpMat A_eq;
  Eigen::VectorXd b_eq;
  SpMat A_le;
  Eigen::VectorXd b_le;
  Eigen::VectorXd lb;  // empty means -inf everywhere
  Eigen::VectorXd ub;  // empty means +inf everywhere
  std::vector<std::vector<int>> socs;

  explicit ConicProblem(int n_vars = 0);
  double objective(const Eigen::VectorXd& x) const;
};

enum class SolveStatus { kOptimal, kInfeasible, kUnbounded, kMaxIter };
const char* to_string(SolveStatus s);

struct KktResiduals {
  double primal = 0.0;  // relative
  double dual = 0.0;    // relative
  double gap = 0.0;     // absolute |primal_obj - dual_obj|
};

// Multipliers follow L = f(x) + y'(A_eq x - b_eq) + z_le'(A_le x - b_le)
//   + z_lb'(lb - x) + z_ub'(x - ub) - sum_k z_k'(x_t, x_u) over cones.
struct Solution {
  Eigen::VectorXd x;
  Eigen::VectorXd y_eq;
  Eigen::VectorXd z_le;
  Eigen::VectorXd z_lb;
  Eigen::VectorXd z_ub;
  std::vector<Eigen::VectorXd> z_soc;
  SolveStatus status = SolveStatus::kMaxIter;
  double primal_obj = 0.0;
  double dual_obj = 0.0;
  KktResiduals kkt;
  int iterations = 0;
};

struct SolveOptions {
  double tol = 1e-8;
  int max_iter = 200;
  double static_reg = 1e-9;
};

// Solver contract: problem in, Solution out. Implementations must be pure.
class ConicSolver {
 public:
  virtual ~ConicSolver() = default;
  virtual std::string name() const = 0;
  virtual Solution solve(const ConicProblem& problem, const SolveOptions& opts) const = 0;
};

class InteriorPointSolver final : public ConicSolver {
 public:
  std::string name() const override { return "ipm"; }
  Solution solve(const ConicProblem& problem, const SolveOptions& opts) const override;
};

const ConicSolver& default_solver();

Solution solve(const ConicProblem& problem, const SolveOptions& opts = {});

// |primal - dual| <= 10 tol scaled by max(1, |primal|).
bool strong_duality_holds(const Solution& s, double tol);

// ---------------------------------------------------------------------------
// Complementarity-constrained LP:
//   maximize objective'v over the linear part of `lp` (its c and P ignored)
//   with v_a * v_b = 0 for each pair (both must carry lb >= 0).
//
// vertex_vars lists variables with box [-1, 1] whose optimum is known to be
// attained at +-1; the search may branch on them. The optional bilinear cut
// states v[lhs] <= sum_k v[xi_k] * (rows_k' v), with |rows_k' v| <= bound_k
// on the feasible set; it is the summed complementarity condition and is
// linearised exactly once every xi_k is fixed (McCormick otherwise).
struct BilinearCut {
  int lhs = -1;
  std::vector<int> xi;
  std::vector<Eigen::SparseVector<double>> rows;
  std::vector<double> bound;
};

struct LcpSystem {
  ConicProblem lp;
  Eigen::VectorXd objective;
  std::vector<std::pair<int, int>> pairs;
  std::vector<int> vertex_vars;
  BilinearCut cut;
};

enum class LcpMode {
  kBigM,         // binary switches z: v_a <= M z, v_b <= M (1 - z)
  kDisjunctive,  // branch directly on v_a = 0 or v_b = 0
};

struct LcpOptions {
  double big_m = 100.0;
  LcpMode mode = LcpMode::kBigM;
  SolveOptions lp;
  long max_nodes = 200000;
  double feas_tol = 1e-6;
};

struct LcpResult {
  Eigen::VectorXd v;
  double objective = -kInf;
  SolveStatus status = SolveStatus::kInfeasible;
  bool big_m_too_small = false;
  long nodes = 0;
};

LcpResult solve_lcp(const LcpSystem& system, const LcpOptions& opts);

}  // namespace gs
