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

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "gridshield/grid.hpp"

namespace gs {

using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

enum class VarKind { kMg, kRe, kIm };

struct VariableIndex {
  VarKind kind = VarKind::kMg;
  int id = 0;  // bus id for kMg, branch id otherwise

  bool operator==(const VariableIndex&) const = default;
};

enum class MeasKind { kVmag2, kPflow, kQflow, kPinj, kQinj };

struct Measurement {
  MeasKind kind = MeasKind::kVmag2;
  int bus = -1;         // vmag2 / injections
  int branch = -1;      // flows
  bool forward = true;  // flows: measured at from_bus when true

  bool operator==(const Measurement&) const = default;
  bool is_flow() const { return kind == MeasKind::kPflow || kind == MeasKind::kQflow; }
  bool is_injection() const { return kind == MeasKind::kPinj || kind == MeasKind::kQinj; }
  // Bus at which the sensor sits.
  int site(const Grid& grid) const;
};

std::string describe(const Measurement& m);

struct MeasurementProfile {
  std::vector<Measurement> items;
};

// Throws on duplicates or dangling references.
void validate_profile(const Grid& grid, const MeasurementProfile& profile);

// Presets: "full", "profile_I" .. "profile_V". Branch flows kept per line:
// I: p/q forward; II, III, V: all but q reverse; IV: all four.
// Nodal sensors: I, III, IV vmag + pinj + qinj; II pinj + qinj; V vmag only.
MeasurementProfile make_profile(const Grid& grid, const std::string& preset);

enum class RowNormMode { kEstimation, kVi };

struct SensingModel {
  SpMat A;  // n_m x n_x, rows already normalized
  std::vector<Measurement> rows;
  std::vector<VariableIndex> cols;
  RowNormMode mode = RowNormMode::kEstimation;
  std::vector<double> row_scale;  // A.row(i) = row_scale[i] * raw row i
  std::vector<int> mg_col;        // per bus
  std::vector<int> re_col;        // per branch, -1 when the branch has no columns
  std::vector<int> im_col;

  int n_m() const { return static_cast<int>(rows.size()); }
  int n_x() const { return static_cast<int>(cols.size()); }
  // Branches carrying (re, im) columns, in column order.
  std::vector<int> basis_branches() const;
  // Lifted state restricted to this model's columns.
  Eigen::VectorXd lift(const Grid& grid, const GroundTruthState& state) const;
};

SensingModel build_sensing_model(const Grid& grid, const MeasurementProfile& profile, RowNormMode mode);

// Normalized measurements A * lift(state).
Eigen::VectorXd evaluate(const SensingModel& model, const Grid& grid, const GroundTruthState& state);
// Same values before row normalization.
Eigen::VectorXd evaluate_raw(const SensingModel& model, const Grid& grid, const GroundTruthState& state);

// Full lift: [mg_0..mg_{nb-1}, re_0, im_0, re_1, im_1, ...] over every branch.
Eigen::VectorXd lift_state(const GroundTruthState& state, const Grid& grid);

// Cone data for a branch with basis columns, in model column space.
// c'x >= ||D x|| is equivalent to mg_i mg_j >= re^2 + im^2 with mg >= 0.
struct BranchCone {
  int branch = 0;
  int mg_i = 0, mg_j = 0, re = 0, im = 0;  // columns
};
std::vector<BranchCone> branch_cones(const SensingModel& model, const Grid& grid);

// T_l x = c c' x - D'D x evaluated at x, as (column, value) pairs.
std::vector<std::pair<int, double>> t_times_x(const BranchCone& cone, const Eigen::VectorXd& x);

// Dense copy of A restricted to the given rows and columns.
Eigen::MatrixXd dense_block(const SpMat& A, const std::vector<int>& rows, const std::vector<int>& cols);

}  // namespace gs
