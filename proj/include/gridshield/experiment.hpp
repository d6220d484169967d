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

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gridshield/attacks.hpp"
#include "gridshield/estimation.hpp"
#include "gridshield/nls.hpp"
#include "gridshield/vulnerability.hpp"

namespace gs {

// ---------------------------------------------------------------------------
// Experiment configuration (JSON, unknown keys rejected). See
// docs/config.md for the schema.

struct NoiseConfig {
  bool enabled = true;
  double sigma_vmag = 1e-5;
  double sigma_other = 0.005;
};

struct AttackConfig {
  AttackKind kind = AttackKind::kNone;
  double fraction = 0.01;  // scattered: share of measurements to corrupt
  int n_lines = -1;        // scattered: explicit line count, overrides fraction
  std::vector<int> zone;   // zonal: attacked bus ids
  bool strict = false;
  bool default_secure = true;
  double mag_lo = 3.75;
  double mag_hi = 4.25;
};

struct NewtonConfig {
  int max_iter = 50;
  NlsInit init = NlsInit::kFlat;
  double tau = 0.0;
  double angle_scale_deg = 100.0;
};

struct ViConfig {
  ViMethod method = ViMethod::kEnumeration;
  int enumeration_cap = 12;
  double big_m = 0.0;
  bool socp = false;
  MatrixNorm norm = MatrixNorm::kMaxRowSum;
};

struct BagConfig {
  std::vector<int> attacked;
  EliminationHeuristic heuristic = EliminationHeuristic::kMinFill;
  bool socp = false;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string case_path;  // resolved against the config file's directory
  std::vector<std::string> profiles{"full"};
  std::vector<std::string> estimators{"l2l1_soc"};  // step-1 variants or "newton"
  double lambda = 0.0;
  double bdd_threshold = 0.01;
  double solver_tol = 1e-8;
  Step2Variant step2 = Step2Variant::kLsClosedForm;
  double lambda2 = 0.1;
  NoiseConfig noise;
  AttackConfig attack;
  NewtonConfig newton;
  ViConfig vi;
  BagConfig bag;
  std::vector<uint64_t> seeds;  // explicit per-run seeds; empty: seed + r
  uint64_t seed = 0;
  int repeat = 1;
  std::string output_dir = "out";
  int threads = 1;
  double flag_threshold = 0.002;
};

ExperimentConfig parse_config(const std::string& json_text, const std::string& base_dir);
ExperimentConfig load_config(const std::string& path);

// Per-run seeds in run order.
std::vector<uint64_t> run_seeds(const ExperimentConfig& cfg);

// Stream-separated sub-seed for a run (noise, attack, init, ...).
uint64_t derive_seed(uint64_t seed, uint64_t stream);

// ---------------------------------------------------------------------------
// Results.

struct Artifact {
  std::string path;  // relative to the output directory
  std::string sha256;
  std::size_t bytes = 0;
};

struct RunReport {
  std::string command;
  std::string output_dir;
  int scenarios = 0;
  int failed = 0;
  std::vector<Artifact> artifacts;  // manifest.json excluded
  std::vector<std::string> notices;
  std::string manifest_path;
  bool ok() const { return failed == 0; }
};

RunReport run_estimation(const ExperimentConfig& cfg);
RunReport run_vulnerability(const ExperimentConfig& cfg);
RunReport run_boundary_demo(const ExperimentConfig& cfg);
RunReport run_bag_vi(const ExperimentConfig& cfg);

// command: "estimate", "vulnmap", "boundary" or "bagvi".
RunReport run_command(const std::string& command, const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Output helpers.

// 12 significant digits; "inf", "-inf" and "nan" for non-finite values.
std::string csv_number(double v);

struct LineStatus {
  int branch = -1;
  double alpha_forward = 0.0;
  double alpha_backward = 0.0;
  bool vulnerable = false;
  bool critical = false;
};

struct BusStatus {
  int bus = -1;
  bool critical = false;
  int critical_index = 0;
  std::optional<double> error;  // boundary demo only
};

// RFC 7946 FeatureCollection; nullopt when any bus lacks coordinates.
std::optional<std::string> geojson_map(const Grid& grid, const std::vector<LineStatus>& lines,
                                       const std::vector<BusStatus>& buses);

struct BarGroup {
  std::string label;
  std::vector<std::pair<std::string, double>> bars;  // name, fraction in [0, 1]
};
std::string bar_chart_svg(const std::string& title, const std::vector<BarGroup>& groups);

}  // namespace gs
