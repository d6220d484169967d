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

#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace gs::detail {

// Sparse LDL' for symmetric quasi-definite matrices. The pattern is fixed at
// analyze(); factor() may be called repeatedly with new values. Pivots whose
// sign disagrees with the expected inertia are replaced by a small value of
// the right sign.
class QuasiDefiniteLdl {
 public:
  // entries: (row, col) with row >= col in the original ordering; duplicates
  // are summed. Every diagonal position must appear at least once.
  void analyze(int n, const std::vector<std::pair<int, int>>& entries);
  // values[t] belongs to entries[t]; signs[i] is +1 or -1.
  void factor(const std::vector<double>& values, const std::vector<int>& signs);
  void solve(Eigen::VectorXd& rhs) const;
  int dynamic_bumps() const { return bumps_; }

  double dyn_eps = 1e-13;
  double dyn_delta = 2e-7;

 private:
  int n_ = 0;
  std::vector<int> old_of_new_;
  std::vector<int> new_of_old_;
  std::vector<int> ap_, ai_;
  std::vector<int> entry_pos_;
  std::vector<double> ax_;
  std::vector<int> etree_, lnz_, lp_, li_;
  std::vector<double> lx_, d_, dinv_;
  int bumps_ = 0;
};

}  // namespace gs::detail
