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

#include "ldl.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/OrderingMethods>
#include <Eigen/Sparse>

#include "gridshield/error.hpp"

namespace gs::detail {

void QuasiDefiniteLdl::analyze(int n, const std::vector<std::pair<int, int>>& entries) {
  n_ = n;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(2 * entries.size() + n);
  for (auto [r, c] : entries) {
    if (r < 0 || c < 0 || r >= n || c >= n) throw Error(ErrorCode::kDimension, "ldl entry out of range");
    trip.emplace_back(r, c, 1.0);
    if (r != c) trip.emplace_back(c, r, 1.0);
  }
  for (int i = 0; i < n; ++i) trip.emplace_back(i, i, 1.0);
  Eigen::SparseMatrix<double> pat(n, n);
  pat.setFromTriplets(trip.begin(), trip.end());

  Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> perm;
  Eigen::AMDOrdering<int> amd;
  amd(pat, perm);
  old_of_new_.assign(perm.indices().data(), perm.indices().data() + n);
  new_of_old_.assign(n, 0);
  for (int k = 0; k < n; ++k) new_of_old_[old_of_new_[k]] = k;

  // Upper-triangular CSC pattern of the permuted matrix.
  std::vector<std::vector<int>> cols(n);
  std::vector<std::pair<int, int>> mapped(entries.size());
  for (size_t t = 0; t < entries.size(); ++t) {
    int a = new_of_old_[entries[t].first];
    int b = new_of_old_[entries[t].second];
    int r = std::min(a, b), c = std::max(a, b);
    mapped[t] = {r, c};
    cols[c].push_back(r);
  }
  for (int j = 0; j < n; ++j) {
    cols[j].push_back(j);
    std::sort(cols[j].begin(), cols[j].end());
    cols[j].erase(std::unique(cols[j].begin(), cols[j].end()), cols[j].end());
  }
  ap_.assign(n + 1, 0);
  for (int j = 0; j < n; ++j) ap_[j + 1] = ap_[j] + static_cast<int>(cols[j].size());
  ai_.resize(ap_[n]);
  for (int j = 0; j < n; ++j) std::copy(cols[j].begin(), cols[j].end(), ai_.begin() + ap_[j]);
  entry_pos_.resize(entries.size());
  for (size_t t = 0; t < entries.size(); ++t) {
    auto [r, c] = mapped[t];
    auto first = ai_.begin() + ap_[c];
    auto last = ai_.begin() + ap_[c + 1];
    entry_pos_[t] = static_cast<int>(std::lower_bound(first, last, r) - ai_.begin());
  }
  ax_.assign(ai_.size(), 0.0);

  // Elimination tree and column counts.
  etree_.assign(n, -1);
  lnz_.assign(n, 0);
  std::vector<int> work(n, -1);
  for (int j = 0; j < n; ++j) {
    work[j] = j;
    for (int p = ap_[j]; p < ap_[j + 1]; ++p) {
      int i = ai_[p];
      while (i != j && work[i] != j) {
        if (etree_[i] == -1) etree_[i] = j;
        ++lnz_[i];
        work[i] = j;
        i = etree_[i];
      }
    }
  }
  lp_.assign(n + 1, 0);
  for (int i = 0; i < n; ++i) lp_[i + 1] = lp_[i] + lnz_[i];
  li_.assign(lp_[n], 0);
  lx_.assign(lp_[n], 0.0);
  d_.assign(n, 0.0);
  dinv_.assign(n, 0.0);
}

void QuasiDefiniteLdl::factor(const std::vector<double>& values, const std::vector<int>& signs) {
  const int n = n_;
  std::fill(ax_.begin(), ax_.end(), 0.0);
  for (size_t t = 0; t < entry_pos_.size(); ++t) ax_[entry_pos_[t]] += values[t];
  std::vector<int> sign_new(n);
  for (int i = 0; i < n; ++i) sign_new[new_of_old_[i]] = signs[i];

  std::vector<char> marked(n, 0);
  std::vector<int> y_idx(n), elim(n), next_space(n);
  std::vector<double> y(n, 0.0);
  for (int i = 0; i < n; ++i) next_space[i] = lp_[i];
  bumps_ = 0;

  for (int k = 0; k < n; ++k) {
    int nnz_y = 0;
    d_[k] = 0.0;
    for (int p = ap_[k]; p < ap_[k + 1]; ++p) {
      int b = ai_[p];
      if (b == k) {
        d_[k] = ax_[p];
        continue;
      }
      y[b] = ax_[p];
      if (!marked[b]) {
        marked[b] = 1;
        elim[0] = b;
        int ne = 1;
        int nxt = etree_[b];
        while (nxt != -1 && nxt < k) {
          if (marked[nxt]) break;
          marked[nxt] = 1;
          elim[ne++] = nxt;
          nxt = etree_[nxt];
        }
        while (ne) y_idx[nnz_y++] = elim[--ne];
      }
    }
    for (int i = nnz_y - 1; i >= 0; --i) {
      int c = y_idx[i];
      int tmp = next_space[c];
      double yc = y[c];
      for (int j = lp_[c]; j < tmp; ++j) y[li_[j]] -= lx_[j] * yc;
      li_[tmp] = k;
      lx_[tmp] = yc * dinv_[c];
      d_[k] -= yc * lx_[tmp];
      ++next_space[c];
      y[c] = 0.0;
      marked[c] = 0;
    }
    if (sign_new[k] * d_[k] < dyn_eps || !std::isfinite(d_[k])) {
      d_[k] = sign_new[k] * dyn_delta;
      ++bumps_;
    }
    dinv_[k] = 1.0 / d_[k];
  }
}

void QuasiDefiniteLdl::solve(Eigen::VectorXd& rhs) const {
  const int n = n_;
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) x[new_of_old_[i]] = rhs[i];
  for (int i = 0; i < n; ++i)
    for (int j = lp_[i]; j < lp_[i + 1]; ++j) x[li_[j]] -= lx_[j] * x[i];
  for (int i = 0; i < n; ++i) x[i] *= dinv_[i];
  for (int i = n - 1; i >= 0; --i)
    for (int j = lp_[i]; j < lp_[i + 1]; ++j) x[i] -= lx_[j] * x[li_[j]];
  for (int i = 0; i < n; ++i) rhs[i] = x[new_of_old_[i]];
}

}  // namespace gs::detail
