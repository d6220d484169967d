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

#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gridshield/conic.hpp"
#include "gridshield/grid.hpp"
#include "gridshield/sensing.hpp"

namespace gs {

enum class Step1Variant { kL1, kL1Soc, kL2L1, kL2L1Soc };
enum class ResolveMode {
  kLeastSquares,  // plain least squares on the kept rows
  kSameVariant,   // least squares with the variant's cone set (b fixed to 0)
};
enum class Step2Variant { kLsClosedForm, kL2L1 };

const char* to_string(Step1Variant v);
Step1Variant parse_step1_variant(const std::string& s);
Step2Variant parse_step2_variant(const std::string& s);
bool uses_cones(Step1Variant v);

// 3e-4 / n_m
double default_lambda(int n_m);

struct Step1Config {
  Step1Variant variant = Step1Variant::kL2L1Soc;
  double lambda = 0.0;  // <= 0 selects default_lambda(n_m)
  double bdd_threshold = 0.01;
  bool resolve_after_cleaning = true;
  ResolveMode resolve = ResolveMode::kLeastSquares;
  SolveOptions solver;
};

struct Step1Output {
  Eigen::VectorXd x_hat;
  Eigen::VectorXd b_hat;
  SolveStatus status = SolveStatus::kMaxIter;
  double objective = 0.0;  // in the program's own units
  int iterations = 0;
};

Step1Output step1(const SensingModel& model, const Grid& grid, const Eigen::VectorXd& y, const Step1Config& cfg);

// (1/n_m) sum f(y_i - a_i'x; psi), f quadratic up to psi and linear beyond.
double huber_objective(const SensingModel& model, const Eigen::VectorXd& y, const Eigen::VectorXd& x, double psi);

// Objective of the l2l1 program at (x, b).
double l2l1_objective(const SensingModel& model, const Eigen::VectorXd& y, const Eigen::VectorXd& x,
                      const Eigen::VectorXd& b, double lambda);

// Rows with |b_i| strictly above the threshold.
std::vector<int> detect_support(const Eigen::VectorXd& b_hat, double threshold);

struct CleanResult {
  Eigen::VectorXd x_hat;
  std::vector<int> removed_rows;
  std::vector<int> kept_rows;
  std::vector<int> unobservable_cols;  // zeroed in x_hat
  bool rank_deficient = false;
  SolveStatus status = SolveStatus::kOptimal;
};

CleanResult clean_and_resolve(const SensingModel& model, const Grid& grid, const Eigen::VectorXd& y,
                              const Step1Output& step1_out, const Step1Config& cfg);

struct PhaseResult {
  Eigen::VectorXd va;
  std::vector<int> used_branches;
  int excluded_branches = 0;  // re = im = 0
  std::vector<int> pinned_buses;
  SolveStatus status = SolveStatus::kOptimal;
};

PhaseResult step2_phase(const Grid& grid, const SensingModel& model, const Eigen::VectorXd& x_hat,
                        Step2Variant variant, double lambda2, const SolveOptions& solver = {});

struct Reconstruction {
  std::vector<double> vm;
  std::vector<double> va;
  std::vector<std::complex<double>> v;
  int clamped = 0;
};

Reconstruction reconstruct(const Grid& grid, const SensingModel& model, const Eigen::VectorXd& x_hat,
                           const Eigen::VectorXd& va_hat);

struct ErrorBound {
  Eigen::VectorXd bound;
  int excluded = 0;
  bool partial = false;
};

// Per-bus bound on the closed-form angle error, |G| |e| with
// G = (L'L)^{-1} L' on the pinned system and
// e_l = (x_re dx_im - x_im dx_re) / (x_re xhat_re).
ErrorBound step2_error_bound(const Grid& grid, const SensingModel& model, const Eigen::VectorXd& x_true,
                             const Eigen::VectorXd& x_hat);

struct EstimationResult {
  Eigen::VectorXd x_hat;
  Eigen::VectorXd b_hat;
  std::vector<int> detected_support;
  std::vector<double> vm_hat;
  std::vector<double> va_hat;
  SolveStatus solver_status = SolveStatus::kMaxIter;
  double objective = 0.0;
  std::vector<int> unobservable_cols;
  int clamped = 0;
};

EstimationResult estimate(const Grid& grid, const SensingModel& model, const Eigen::VectorXd& y,
                          const Step1Config& cfg, Step2Variant step2 = Step2Variant::kLsClosedForm,
                          double lambda2 = 0.1);

}  // namespace gs
