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

#include <array>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gridshield/grid.hpp"
#include "gridshield/sensing.hpp"

namespace gs {

// Philox4x32-10 counter-based generator. Streams are independent for
// distinct (seed, stream) pairs and reproducible on every platform.
class Philox {
 public:
  using Block = std::array<uint32_t, 4>;
  static Block bijection(Block counter, std::array<uint32_t, 2> key);

  explicit Philox(uint64_t seed, uint64_t stream = 0);
  uint32_t next_u32();
  uint64_t next_u64();
  double uniform();  // [0, 1), 53 bits
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();   // Box-Muller, one draw per call
  // Uniform integer in [0, n).
  uint64_t below(uint64_t n);

 private:
  std::array<uint32_t, 2> key_;
  uint64_t counter_ = 0;
  uint64_t stream_ = 0;
  Block buf_{};
  int used_ = 4;
};

struct NoiseModel {
  double sigma_vmag = 1e-5;
  double sigma_other = 0.005;
  uint64_t seed = 0;
};

enum class AttackKind { kNone, kScattered, kZonal };

struct AttackSpec {
  AttackKind kind = AttackKind::kNone;
  int n_lines = 0;                // scattered
  std::vector<int> zone;          // zonal: attacked buses
  std::vector<int> secure_rows;   // zonal: explicit secure rows
  bool default_secure = true;     // zonal: vmag2 of every zone bus is secure
  bool strict = false;            // zonal: corrupt every row sited in the zone
  double mag_lo = 3.75;
  double mag_hi = 4.25;
  uint64_t seed = 0;
};

// Noise is drawn in raw per-unit and then scaled with the rows; bad data is
// drawn directly in normalized units. y = A x + w + b holds with A normalized.
struct ScenarioBatch {
  Eigen::VectorXd y;
  Eigen::VectorXd w_true;
  Eigen::VectorXd b_true;
  std::vector<int> J_true;
  std::vector<int> attacked_lines;
  Eigen::VectorXd x_true;
};

ScenarioBatch generate(const SensingModel& model, const Grid& grid, const GroundTruthState& state,
                       const NoiseModel& noise, const AttackSpec& attack);

// Rows a zonal attack may corrupt: rows sited at zone buses minus flows on
// lines leaving the zone and minus secure rows (all sited rows if strict).
std::vector<int> zonal_rows(const SensingModel& model, const Grid& grid, const AttackSpec& attack);

double rmse(const std::vector<std::complex<double>>& v_true, const std::vector<std::complex<double>>& v_hat);
std::vector<std::complex<double>> phasors(const std::vector<double>& vm, const std::vector<double>& va);

struct F1Score {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};
F1Score f1(const std::vector<int>& J_true, const std::vector<int>& J_hat);

// Replay format: <prefix>.bin holds y, w, b, x as little-endian float64;
// <prefix>.json holds sizes, supports and the payload's SHA-256.
void write_batch(const std::string& prefix, const ScenarioBatch& batch);
ScenarioBatch read_batch(const std::string& prefix);

}  // namespace gs
