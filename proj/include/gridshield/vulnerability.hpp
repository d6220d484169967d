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

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gridshield/conic.hpp"
#include "gridshield/grid.hpp"
#include "gridshield/sensing.hpp"

namespace gs {

// ---------------------------------------------------------------------------
// Region partition around a set of attacked buses.

struct RegionPartition {
  std::vector<int> attacked, inner, outer, safe;  // bus ids, sorted
  std::vector<int> lines_at, lines_at_bi, lines_bi_bo, lines_bd, lines_sf;
  std::vector<int> m_at, m_bi, m_bo, m_sf;  // model rows
  std::vector<int> x_at, x_bd, x_sf;        // model columns
  std::vector<std::string> enlargement_log;
};

// Builds the partition, absorbing inner-boundary buses into the attacked set
// until no line joins two inner buses and no inner bus touches two attacked
// buses.
RegionPartition build_partition(const Grid& grid, const SensingModel& model, std::vector<int> attacked);

// ---------------------------------------------------------------------------
// Local (single-line) boundary for the direction attacked -> inner.

struct LocalBoundary {
  int branch = -1;
  int attacked_bus = -1;
  int inner_bus = -1;
  std::vector<int> cols;     // X_bd
  std::vector<int> rows_ok;  // measurements on X_bd only
  std::vector<int> rows_x;   // measurements on X_bd and the attacked line
  std::vector<int> lines;    // attacked line followed by inner-to-outer lines
  bool empty_flag = false;   // degree-1 inner bus without measurements
};

// forward: from_bus is attacked, to_bus is the inner bus.
LocalBoundary local_boundary(const Grid& grid, const SensingModel& model, int branch, bool forward);

// ---------------------------------------------------------------------------
// Generic minimax index  max_xi min { ||h||_inf : A_ok' h + A_x' xi + T w = 0, w >= 0 }.

struct ViSystem {
  Eigen::MatrixXd A_ok;  // n_ok x k
  Eigen::MatrixXd A_x;   // n_x x k
  Eigen::MatrixXd T;     // k x n_l; zero columns for the LP index
};

enum class ViMethod { kEnumeration, kLcp, kMip };
const char* to_string(ViMethod m);
ViMethod parse_vi_method(const std::string& s);

struct ViOptions {
  ViMethod method = ViMethod::kEnumeration;
  int enumeration_cap = 12;  // larger xi falls back to kLcp
  double big_m = 0.0;        // <= 0: derived from the dual bounds
  int big_m_retries = 3;
  SolveOptions lp;
};

struct ViValue {
  double alpha = 0.0;  // +inf when the inner problem is infeasible for some xi
  Eigen::VectorXd xi;  // worst-case sign vector
  ViMethod method = ViMethod::kEnumeration;
  double certificate_gap = 0.0;
  long subproblems = 0;
};

ViValue vulnerability_index(const ViSystem& sys, const ViOptions& opts);

// Inner value for a fixed xi (entries may lie inside [-1, 1]).
double inner_value(const ViSystem& sys, const Eigen::VectorXd& xi, const SolveOptions& lp = {});

ViSystem line_system(const Grid& grid, const SensingModel& model, const LocalBoundary& lb,
                     const Eigen::VectorXd* x_lifted);

struct LineVIResult {
  int branch = -1;
  bool forward = true;
  double alpha_lp = 0.0;
  std::optional<double> alpha_socp;
  ViMethod method = ViMethod::kEnumeration;
  Eigen::VectorXd xi_star;
  double certificate_gap = 0.0;
};

LineVIResult line_vi_lp(const Grid& grid, const SensingModel& model, int branch, bool forward,
                        const ViOptions& opts = {});
LineVIResult line_vi_socp(const Grid& grid, const SensingModel& model, int branch, bool forward,
                          const Eigen::VectorXd& x_lifted, const ViOptions& opts = {});

// ---------------------------------------------------------------------------
// Incoherence and eigenvalue certificates.

enum class MatrixNorm {
  kMaxColumnSum,  // maximum absolute column sum
  kMaxRowSum,     // maximum absolute row sum (induced infinity norm)
};
double matrix_norm(const Eigen::MatrixXd& M, MatrixNorm norm);

// || pinv(A_clean') A_bad' ||. Throws kRankDeficient (listing the deficient
// columns) when A_clean lacks full column rank.
double incoherence(const Eigen::MatrixXd& A_clean, const Eigen::MatrixXd& A_bad, MatrixNorm norm);

double mutual_incoherence(const SensingModel& model, const std::vector<int>& J, MatrixNorm norm);

// Local incoherence of a line direction; nullopt when A_ok is rank deficient.
std::optional<double> line_incoherence(const Grid& grid, const SensingModel& model, int branch, bool forward,
                                       MatrixNorm norm);

struct LowerEigenvalue {
  double value = 0.0;
  double boundary_q = 0.0;   // lambda_min(Q'Q), Q = [A_{bd,bd}  I_bi']
  double outer = 0.0;        // lambda_min(A_{bo,bd}' A_{bo,bd})
  double safe = 0.0;         // lambda_min(A_{sf,sf}' A_{sf,sf}); +inf if X_sf is empty
};
LowerEigenvalue lower_eigenvalue(const SensingModel& model, const RegionPartition& part);

// ---------------------------------------------------------------------------
// Classification.

struct VulnerabilityReport {
  std::vector<LineVIResult> forward, backward;  // per branch
  std::vector<char> v_line, c_line, robust;     // per branch
  std::vector<char> c_bus;                      // per bus
  std::vector<int> critical_index;              // per bus
  double v_line_fraction = 0.0;
  double c_line_fraction = 0.0;
  double c_bus_fraction = 0.0;
  double mean_critical_index = 0.0;
};

// Uses alpha_socp when every entry carries it and use_socp is set.
VulnerabilityReport classify(const Grid& grid, std::vector<LineVIResult> forward, std::vector<LineVIResult> backward,
                             bool use_socp = false);

struct ReportOptions {
  ViOptions vi;
  bool socp = false;
  std::optional<Eigen::VectorXd> x_lifted;  // SOCP state; required when socp
  int threads = 1;
};
VulnerabilityReport vulnerability_report(const Grid& grid, const SensingModel& model, const ReportOptions& opts);

// ---------------------------------------------------------------------------
// Tree decomposition.

struct TreeDecomposition {
  std::vector<std::vector<int>> bags;        // bus ids, sorted
  std::vector<std::pair<int, int>> edges;    // tree edges between bag ids
  int width = 0;
};

enum class EliminationHeuristic { kMinDegree, kMinFill };

TreeDecomposition tree_decompose(const Grid& grid, EliminationHeuristic heuristic);
TreeDecomposition tree_decompose(int n_nodes, const std::vector<std::pair<int, int>>& edges,
                                 EliminationHeuristic heuristic);

struct TreeCheck {
  bool is_tree = false;
  bool node_coverage = false;
  bool edge_coverage = false;
  bool running_intersection = false;
  bool ok() const { return is_tree && node_coverage && edge_coverage && running_intersection; }
};
TreeCheck validate_tree(const TreeDecomposition& td, int n_nodes, const std::vector<std::pair<int, int>>& edges);
TreeCheck validate_tree(const TreeDecomposition& td, const Grid& grid);

struct BagVIResult {
  int link_bag = -1;
  int infected_bag = -1;
  std::vector<int> adhesion, outer_link;  // bus ids
  std::vector<int> m_ad, m_ol, x_lk;      // model rows / columns
  double alpha = 0.0;
  ViMethod method = ViMethod::kEnumeration;
};

struct BagAnalysis {
  std::vector<int> infected, link, safe;  // bag ids
  bool infected_subtree = false;
  std::vector<BagVIResult> results;  // one per link bag adjacent to exactly one infected bag
  std::string note;                  // reason when no index could be computed
};

BagAnalysis bag_vi(const Grid& grid, const SensingModel& model, const TreeDecomposition& td,
                   const std::vector<int>& attacked, bool socp, const Eigen::VectorXd* x_lifted,
                   const ViOptions& opts = {});

}  // namespace gs
