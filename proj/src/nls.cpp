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

#include "gridshield/nls.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/SparseCholesky>

#include "gridshield/attacks.hpp"

namespace gs {

using Vec = Eigen::VectorXd;

namespace {

// Flow seen from `site` towards `other` and its partial derivatives.
struct FlowEval {
  double val;
  double d_vs, d_vo, d_ts;  // d/d theta_other = -d_ts
};

FlowEval flow(const Branch& br, bool reactive, double vs, double vo, double ts, double to) {
  const double d = ts - to;
  const double c = std::cos(d), s = std::sin(d);
  const double g = br.g, b = br.b, bs = br.b_sh / 2.0;
  if (!reactive) {
    double k = g * c + b * s;
    return {g * vs * vs - vs * vo * k, 2.0 * g * vs - vo * k, -vs * k, vs * vo * (g * s - b * c)};
  }
  double k = g * s - b * c;
  return {-(b + bs) * vs * vs - vs * vo * k, -2.0 * (b + bs) * vs - vo * k, -vs * k, -vs * vo * (g * c + b * s)};
}

template <typename Fn>
void for_each_term(const Grid& grid, const Measurement& m, Fn&& fn) {
  if (m.is_flow()) {
    const Branch& br = grid.branches[m.branch];
    int site = m.forward ? br.from_bus : br.to_bus;
    int other = m.forward ? br.to_bus : br.from_bus;
    fn(br, m.kind == MeasKind::kQflow, site, other);
  } else if (m.is_injection()) {
    for (const auto& inc : grid.adjacency[m.bus]) {
      const Branch& br = grid.branches[inc.branch];
      fn(br, m.kind == MeasKind::kQinj, m.bus, grid.other_end(inc.branch, m.bus));
    }
  }
}

}  // namespace

Vec polar_measure(const Grid& grid, const SensingModel& model, const std::vector<double>& vm,
                  const std::vector<double>& va) {
  Vec out(model.n_m());
  for (int i = 0; i < model.n_m(); ++i) {
    const Measurement& m = model.rows[i];
    double v = 0.0;
    if (m.kind == MeasKind::kVmag2) {
      v = vm[m.bus] * vm[m.bus];
    } else {
      for_each_term(grid, m, [&](const Branch& br, bool q, int s, int o) {
        v += flow(br, q, vm[s], vm[o], va[s], va[o]).val;
      });
    }
    out[i] = model.row_scale[i] * v;
  }
  return out;
}

Eigen::SparseMatrix<double> polar_jacobian(const Grid& grid, const SensingModel& model, const std::vector<double>& vm,
                                           const std::vector<double>& va) {
  const int nb = grid.n_bus();
  std::vector<Eigen::Triplet<double>> t;
  for (int i = 0; i < model.n_m(); ++i) {
    const Measurement& m = model.rows[i];
    const double sc = model.row_scale[i];
    if (m.kind == MeasKind::kVmag2) {
      t.emplace_back(i, m.bus, sc * 2.0 * vm[m.bus]);
      continue;
    }
    for_each_term(grid, m, [&](const Branch& br, bool q, int s, int o) {
      FlowEval f = flow(br, q, vm[s], vm[o], va[s], va[o]);
      t.emplace_back(i, s, sc * f.d_vs);
      t.emplace_back(i, o, sc * f.d_vo);
      t.emplace_back(i, nb + s, sc * f.d_ts);
      t.emplace_back(i, nb + o, -sc * f.d_ts);
    });
  }
  Eigen::SparseMatrix<double> J(model.n_m(), 2 * nb);
  J.setFromTriplets(t.begin(), t.end());
  return J;
}

namespace {

struct GnOutcome {
  bool converged = false;
  int iterations = 0;
};

// Gauss-Newton over the kept rows with the reference angle pinned.
GnOutcome gauss_newton(const Grid& grid, const SensingModel& model, const Vec& y, const std::vector<char>& keep,
                       std::vector<double>& vm, std::vector<double>& va, const NlsConfig& cfg) {
  const int nb = grid.n_bus();
  // Unknowns: all vm, all va except the reference.
  std::vector<int> col_of(2 * nb, -1);
  int nu = 0;
  for (int k = 0; k < nb; ++k) col_of[k] = nu++;
  for (int k = 0; k < nb; ++k)
    if (k != grid.ref_bus) col_of[nb + k] = nu++;
  std::vector<int> kept;
  for (int i = 0; i < model.n_m(); ++i)
    if (keep[i]) kept.push_back(i);
  std::vector<int> row_of(model.n_m(), -1);
  for (size_t r = 0; r < kept.size(); ++r) row_of[kept[r]] = static_cast<int>(r);

  GnOutcome out;
  for (int it = 0; it < cfg.max_newton_iter; ++it) {
    out.iterations = it + 1;
    Vec mfull = polar_measure(grid, model, vm, va);
    Eigen::SparseMatrix<double> Jfull = polar_jacobian(grid, model, vm, va);
    std::vector<Eigen::Triplet<double>> t;
    for (int j = 0; j < Jfull.outerSize(); ++j)
      for (Eigen::SparseMatrix<double>::InnerIterator itj(Jfull, j); itj; ++itj) {
        int r = row_of[itj.row()], c = col_of[itj.col()];
        if (r >= 0 && c >= 0) t.emplace_back(r, c, itj.value());
      }
    Eigen::SparseMatrix<double> J(static_cast<int>(kept.size()), nu);
    J.setFromTriplets(t.begin(), t.end());
    Vec r(static_cast<int>(kept.size()));
    for (size_t k = 0; k < kept.size(); ++k) r[static_cast<int>(k)] = y[kept[k]] - mfull[kept[k]];

    Eigen::SparseMatrix<double> N = J.transpose() * J;
    Vec g = J.transpose() * r;
    Vec dx;
    double damping = 0.0;
    for (int attempt = 0; attempt < 60; ++attempt) {
      Eigen::SparseMatrix<double> Nd = N;
      if (damping > 0.0) {
        for (int k = 0; k < nu; ++k) Nd.coeffRef(k, k) += damping;
      }
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(Nd);
      bool ok = ldlt.info() == Eigen::Success;
      if (ok) {
        dx = ldlt.solve(g);
        ok = ldlt.info() == Eigen::Success && dx.allFinite() && (ldlt.vectorD().array() > 0.0).all();
      }
      if (ok) break;
      damping = damping == 0.0 ? 1e-8 : 2.0 * damping;
      dx.resize(0);
    }
    if (dx.size() == 0) return out;
    for (int k = 0; k < nb; ++k) vm[k] += dx[col_of[k]];
    for (int k = 0; k < nb; ++k)
      if (col_of[nb + k] >= 0) va[k] += dx[col_of[nb + k]];
    if (!dx.allFinite()) return out;
    if (dx.lpNorm<Eigen::Infinity>() < cfg.step_tol) {
      out.converged = true;
      return out;
    }
  }
  return out;
}

}  // namespace

NlsResult newton_se(const Grid& grid, const SensingModel& model, const Vec& y, const NlsConfig& cfg) {
  if (y.size() != model.n_m()) throw Error(ErrorCode::kDimension, "measurement vector length mismatch");
  if (cfg.max_newton_iter <= 0 || !(cfg.step_tol > 0.0) || cfg.max_bdd_rounds < 0)
    throw Error(ErrorCode::kInvalidArgument, "bad Newton configuration");
  const int nb = grid.n_bus();
  NlsResult res;
  res.vm.assign(nb, 1.0);
  res.va.assign(nb, 0.0);
  if (cfg.init == NlsInit::kPerturbed) {
    GroundTruthState base = cfg.base ? *cfg.base : flat_state(grid);
    if (static_cast<int>(base.vm.size()) != nb) throw Error(ErrorCode::kDimension, "base state size mismatch");
    Philox rng(cfg.seed, 3);
    const double deg = std::numbers::pi / 180.0;
    for (int k = 0; k < nb; ++k) {
      double mag = rng.uniform(1.0 - cfg.tau, 1.0 + cfg.tau);
      double ang = rng.uniform(-cfg.angle_scale_deg * cfg.tau, cfg.angle_scale_deg * cfg.tau) * deg;
      res.vm[k] = base.vm[k] * mag;
      res.va[k] = base.va[k] + ang;
    }
    double ref = res.va[grid.ref_bus];
    for (double& a : res.va) a -= ref;
  }

  std::vector<char> keep(model.n_m(), 1);
  for (int round = 0;; ++round) {
    GnOutcome o = gauss_newton(grid, model, y, keep, res.vm, res.va, cfg);
    res.iterations += o.iterations;
    res.converged = o.converged;
    Vec r = y - polar_measure(grid, model, res.vm, res.va);
    if (!r.allFinite()) {
      res.converged = false;
      break;
    }
    res.cost = 0.0;
    std::vector<double> absr;
    for (int i = 0; i < model.n_m(); ++i)
      if (keep[i]) {
        res.cost += 0.5 * r[i] * r[i];
        absr.push_back(std::abs(r[i]));
      }
    if (round >= cfg.max_bdd_rounds || absr.empty()) break;
    double thr = cfg.residual_bdd_threshold;
    if (!(thr > 0.0)) {
      auto mid = absr.begin() + static_cast<long>(absr.size() / 2);
      std::nth_element(absr.begin(), mid, absr.end());
      thr = 3.0 * *mid / 0.6745;
    }
    thr = std::max(thr, 1e-9);
    bool removed = false;
    for (int i = 0; i < model.n_m(); ++i)
      if (keep[i] && std::abs(r[i]) > thr) {
        keep[i] = 0;
        res.removed_rows.push_back(i);
        removed = true;
      }
    if (!removed) break;
  }
  std::sort(res.removed_rows.begin(), res.removed_rows.end());
  return res;
}

}  // namespace gs
