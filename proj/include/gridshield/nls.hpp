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

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "gridshield/grid.hpp"
#include "gridshield/sensing.hpp"

namespace gs {

enum class NlsInit { kFlat, kPerturbed };

struct NlsConfig {
  int max_newton_iter = 50;
  double step_tol = 1e-10;
  double residual_bdd_threshold = 0.0;  // <= 0: 3 x MAD / 0.6745 of the residuals
  int max_bdd_rounds = 3;
  NlsInit init = NlsInit::kFlat;
  // Perturbed start: v0_k = v_k * m e^{i phi}, m ~ U[1 - tau, 1 + tau],
  // phi ~ U[-angle_scale tau, angle_scale tau] degrees.
  double tau = 0.0;
  double angle_scale_deg = 100.0;
  uint64_t seed = 0;
  std::optional<GroundTruthState> base;  // state the perturbation is applied to
};

struct NlsResult {
  std::vector<double> vm;
  std::vector<double> va;
  bool converged = false;
  std::vector<int> removed_rows;
  int iterations = 0;
  double cost = 0.0;  // 1/2 ||y - m||^2 on the kept rows
};

// Normalized polar measurement functions (row_scale applied), so they
// agree with A * lift(state).
Eigen::VectorXd polar_measure(const Grid& grid, const SensingModel& model, const std::vector<double>& vm,
                              const std::vector<double>& va);

// Jacobian with columns [vm_0..vm_{nb-1}, va_0..va_{nb-1}].
Eigen::SparseMatrix<double> polar_jacobian(const Grid& grid, const SensingModel& model, const std::vector<double>& vm,
                                           const std::vector<double>& va);

NlsResult newton_se(const Grid& grid, const SensingModel& model, const Eigen::VectorXd& y, const NlsConfig& cfg);

}  // namespace gs
