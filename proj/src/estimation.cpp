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

#include "gridshield/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/OrderingMethods>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseQR>
#include <fmt/format.h>

#include "builder.hpp"

namespace gs {

using Vec = Eigen::VectorXd;
using detail::ProblemBuilder;

const char* to_string(Step1Variant v) {
  switch (v) {
    case Step1Variant::kL1: return "l1";
    case Step1Variant::kL1Soc: return "l1_soc";
    case Step1Variant::kL2L1: return "l2l1";
    case Step1Variant::kL2L1Soc: return "l2l1_soc";
  }
  return "?";
}

Step1Variant parse_step1_variant(const std::string& s) {
  if (s == "l1") return Step1Variant::kL1;
  if (s == "l1_soc") return Step1Variant::kL1Soc;
  if (s == "l2l1") return Step1Variant::kL2L1;
  if (s == "l2l1_soc") return Step1Variant::kL2L1Soc;
  throw Error(ErrorCode::kConfig, fmt::format("unknown step-1 variant '{}'", s));
}

Step2Variant parse_step2_variant(const std::string& s) {
  if (s == "ls_closed_form" || s == "ls") return Step2Variant::kLsClosedForm;
  if (s == "l2l1") return Step2Variant::kL2L1;
  throw Error(ErrorCode::kConfig, fmt::format("unknown step-2 variant '{}'", s));
}

bool uses_cones(Step1Variant v) { return v == Step1Variant::kL1Soc || v == Step1Variant::kL2L1Soc; }

double default_lambda(int n_m) { return 3e-4 / std::max(1, n_m); }

namespace {

bool is_l2l1(Step1Variant v) { return v == Step1Variant::kL2L1 || v == Step1Variant::kL2L1Soc; }

SpMat select_rows(const SpMat& A, const std::vector<int>& rows) {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) t.emplace_back(static_cast<int>(i), rows[i], 1.0);
  SpMat S(static_cast<int>(rows.size()), A.rows());
  S.setFromTriplets(t.begin(), t.end());
  SpMat out = S * A;
  out.makeCompressed();
  return out;
}

// Union-find over buses joined by the given branches.
std::vector<int> components(const Grid& grid, const std::vector<int>& branches) {
  std::vector<int> parent(grid.n_bus());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  for (int l : branches) {
    int a = find(grid.branches[l].from_bus), b = find(grid.branches[l].to_bus);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  std::vector<int> comp(grid.n_bus());
  for (int k = 0; k < grid.n_bus(); ++k) comp[k] = find(k);
  return comp;
}

// Phase system shared by the estimator and the error bound: branch list,
// pinned buses and the column index of every free bus (-1 when pinned).
struct PhaseSystem {
  std::vector<int> branches;
  std::vector<int> pinned;
  std::vector<int> free_col;
  int n_free = 0;
  SpMat L;  // n_branches x n_free
};

PhaseSystem phase_system(const Grid& grid, std::vector<int> branches) {
  PhaseSystem ps;
  ps.branches = std::move(branches);
  std::vector<int> comp = components(grid, ps.branches);
  std::vector<int> root_pin(grid.n_bus(), -1);
  // The reference bus anchors its component; other components use their
  // lowest bus id.
  root_pin[comp[grid.ref_bus]] = grid.ref_bus;
  for (int k = 0; k < grid.n_bus(); ++k)
    if (root_pin[comp[k]] < 0) root_pin[comp[k]] = k;
  ps.free_col.assign(grid.n_bus(), -1);
  for (int k = 0; k < grid.n_bus(); ++k) {
    if (root_pin[comp[k]] == k) {
      ps.pinned.push_back(k);
    } else {
      ps.free_col[k] = ps.n_free++;
    }
  }
  std::vector<Eigen::Triplet<double>> t;
  for (size_t r = 0; r < ps.branches.size(); ++r) {
    const Branch& br = grid.branches[ps.branches[r]];
    if (ps.free_col[br.from_bus] >= 0) t.emplace_back(static_cast<int>(r), ps.free_col[br.from_bus], 1.0);
    if (ps.free_col[br.to_bus] >= 0) t.emplace_back(static_cast<int>(r), ps.free_col[br.to_bus], -1.0);
  }
  ps.L.resize(static_cast<int>(ps.branches.size()), ps.n_free);
  ps.L.setFromTriplets(t.begin(), t.end());
  return ps;
}

}  // namespace

Step1Output step1(const SensingModel& model, const Grid& grid, const Vec& y, const Step1Config& cfg) {
  const int nm = model.n_m(), nx = model.n_x();
  if (y.size() != nm) throw Error(ErrorCode::kDimension, "measurement vector length mismatch");
  const double lambda = cfg.lambda > 0.0 ? cfg.lambda : default_lambda(nm);
  ProblemBuilder B;
  const int x0 = B.add_vars(nx);
  const int bp = B.add_vars(nm, 0.0, kInf);
  const int bm = B.add_vars(nm, 0.0, kInf);
  // The l2l1 objective is multiplied by n_m so the solver sees unit-scale data.
  const double psi = nm * lambda;
  const bool l2 = is_l2l1(cfg.variant);
  for (int i = 0; i < nm; ++i) {
    B.set_cost(bp + i, l2 ? psi : 1.0);
    B.set_cost(bm + i, l2 ? psi : 1.0);
  }
  std::vector<std::pair<int, double>> extra{{bp, 1.0}, {bm, -1.0}};
  if (l2) {
    const int r0 = B.add_vars(nm);
    for (int i = 0; i < nm; ++i) B.add_quad(r0 + i, 1.0);
    extra.emplace_back(r0, 1.0);
  }
  B.add_eq_block(model.A, x0, extra, y);
  if (uses_cones(cfg.variant)) detail::add_branch_cones(B, branch_cones(model, grid), x0);

  Solution s = solve(B.build(), cfg.solver);
  Step1Output out;
  out.status = s.status;
  out.iterations = s.iterations;
  out.x_hat = s.x.segment(x0, nx);
  out.b_hat = s.x.segment(bp, nm) - s.x.segment(bm, nm);
  out.objective = l2 ? l2l1_objective(model, y, out.x_hat, out.b_hat, lambda) : out.b_hat.lpNorm<1>();
  return out;
}

double huber_objective(const SensingModel& model, const Vec& y, const Vec& x, double psi) {
  if (!(psi > 0.0)) throw Error(ErrorCode::kInvalidArgument, "psi must be positive");
  Vec r = y - model.A * x;
  double acc = 0.0;
  for (int i = 0; i < r.size(); ++i) {
    double a = std::abs(r[i]);
    acc += a <= psi ? 0.5 * a * a : psi * (a - 0.5 * psi);
  }
  return acc / std::max<Eigen::Index>(1, r.size());
}

double l2l1_objective(const SensingModel& model, const Vec& y, const Vec& x, const Vec& b, double lambda) {
  const double nm = std::max(1, model.n_m());
  Vec r = y - model.A * x - b;
  return r.squaredNorm() / (2.0 * nm) + lambda * b.lpNorm<1>();
}

std::vector<int> detect_support(const Vec& b_hat, double threshold) {
  std::vector<int> out;
  for (int i = 0; i < b_hat.size(); ++i)
    if (std::abs(b_hat[i]) > threshold) out.push_back(i);
  return out;
}

CleanResult clean_and_resolve(const SensingModel& model, const Grid& grid, const Vec& y, const Step1Output& s1,
                              const Step1Config& cfg) {
  const int nm = model.n_m(), nx = model.n_x();
  CleanResult cr;
  cr.removed_rows = detect_support(s1.b_hat, cfg.bdd_threshold);
  std::vector<char> drop(nm, 0);
  for (int i : cr.removed_rows) drop[i] = 1;
  for (int i = 0; i < nm; ++i)
    if (!drop[i]) cr.kept_rows.push_back(i);
  if (!cfg.resolve_after_cleaning) {
    cr.x_hat = s1.x_hat;
    return cr;
  }
  SpMat Ac = select_rows(model.A, cr.kept_rows);
  Vec yc(static_cast<int>(cr.kept_rows.size()));
  for (size_t i = 0; i < cr.kept_rows.size(); ++i) yc[static_cast<int>(i)] = y[cr.kept_rows[i]];

  if (cfg.resolve == ResolveMode::kSameVariant && uses_cones(cfg.variant)) {
    ProblemBuilder B;
    const int x0 = B.add_vars(nx);
    const int r0 = B.add_vars(static_cast<int>(yc.size()));
    for (int i = 0; i < yc.size(); ++i) B.add_quad(r0 + i, 1.0);
    B.add_eq_block(Ac, x0, {{r0, 1.0}}, yc);
    detail::add_branch_cones(B, branch_cones(model, grid), x0);
    Solution s = solve(B.build(), cfg.solver);
    cr.status = s.status;
    cr.x_hat = s.x.segment(x0, nx);
    return cr;
  }

  // Columns without any kept row cannot be estimated.
  std::vector<char> observable(nx, 0);
  for (int j = 0; j < Ac.outerSize(); ++j)
    for (SpMat::InnerIterator it(Ac, j); it; ++it)
      if (it.value() != 0.0) observable[j] = 1;

  for (int attempt = 0; attempt < 2; ++attempt) {
    std::vector<int> cols;
    for (int j = 0; j < nx; ++j)
      if (observable[j]) cols.push_back(j);
    std::vector<Eigen::Triplet<double>> t;
    for (size_t k = 0; k < cols.size(); ++k) t.emplace_back(cols[k], static_cast<int>(k), 1.0);
    SpMat C(nx, static_cast<int>(cols.size()));
    C.setFromTriplets(t.begin(), t.end());
    SpMat Ar = Ac * C;
    Ar.makeCompressed();
    Eigen::SparseQR<SpMat, Eigen::COLAMDOrdering<int>> qr(Ar);
    if (qr.info() == Eigen::Success && qr.rank() == static_cast<Eigen::Index>(cols.size())) {
      Vec xr = qr.solve(yc);
      cr.x_hat = Vec::Zero(nx);
      for (size_t k = 0; k < cols.size(); ++k) cr.x_hat[cols[k]] = xr[static_cast<int>(k)];
      break;
    }
    // Rank loss beyond empty columns: flag every column touched by the null space.
    cr.rank_deficient = true;
    Eigen::MatrixXd N = Eigen::MatrixXd(Ar.transpose() * Ar);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(N);
    lu.setThreshold(1e-10);
    Eigen::MatrixXd ker = lu.kernel();
    double scale = ker.size() ? ker.cwiseAbs().maxCoeff() : 0.0;
    for (int r = 0; r < ker.rows(); ++r)
      if (ker.row(r).cwiseAbs().maxCoeff() > 1e-8 * scale) observable[cols[r]] = 0;
    if (attempt == 1) {
      cr.status = SolveStatus::kMaxIter;
      cr.x_hat = Vec::Zero(nx);
    }
  }
  // A branch phase needs both re and im; drop the pair together so the
  // angle step skips the branch instead of reading a one-sided value.
  for (int l : model.basis_branches()) {
    int a = model.re_col[l], b = model.im_col[l];
    if (!observable[a] || !observable[b]) {
      observable[a] = observable[b] = 0;
      cr.x_hat[a] = cr.x_hat[b] = 0.0;
    }
  }
  for (int j = 0; j < nx; ++j)
    if (!observable[j]) cr.unobservable_cols.push_back(j);
  if (!cr.unobservable_cols.empty()) cr.rank_deficient = true;
  return cr;
}

PhaseResult step2_phase(const Grid& grid, const SensingModel& model, const Vec& x_hat, Step2Variant variant,
                        double lambda2, const SolveOptions& solver) {
  if (x_hat.size() != model.n_x()) throw Error(ErrorCode::kDimension, "state length mismatch");
  PhaseResult pr;
  std::vector<int> used;
  std::vector<double> delta;
  for (int l : model.basis_branches()) {
    double re = x_hat[model.re_col[l]], im = x_hat[model.im_col[l]];
    if (re == 0.0 && im == 0.0) {
      ++pr.excluded_branches;
      continue;
    }
    used.push_back(l);
    delta.push_back(std::atan2(im, re));
  }
  PhaseSystem ps = phase_system(grid, used);
  pr.used_branches = ps.branches;
  for (int k : ps.pinned)
    if (k != grid.ref_bus) pr.pinned_buses.push_back(k);
  Vec th = Eigen::Map<Vec>(delta.data(), static_cast<int>(delta.size()));
  Vec free_sol = Vec::Zero(ps.n_free);

  if (ps.n_free > 0) {
    if (variant == Step2Variant::kLsClosedForm) {
      SpMat N = ps.L.transpose() * ps.L;
      Eigen::SimplicialLDLT<SpMat> ldlt(N);
      if (ldlt.info() != Eigen::Success) throw Error(ErrorCode::kRankDeficient, "phase normal equations are singular");
      free_sol = ldlt.solve(ps.L.transpose() * th);
    } else {
      if (!(lambda2 >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "lambda2 must be nonnegative");
      const int nl = static_cast<int>(ps.branches.size());
      ProblemBuilder B;
      const int t0 = B.add_vars(ps.n_free);
      const int r0 = B.add_vars(nl);
      const int a0 = B.add_vars(nl, 0.0, kInf);
      for (int i = 0; i < nl; ++i) {
        B.add_quad(r0 + i, 2.0 / nl);
        B.set_cost(a0 + i, lambda2);
        B.add_le({{r0 + i, 1.0}, {a0 + i, -1.0}}, 0.0);
        B.add_le({{r0 + i, -1.0}, {a0 + i, -1.0}}, 0.0);
      }
      B.add_eq_block(ps.L, t0, {{r0, -1.0}}, th);
      Solution s = solve(B.build(), solver);
      pr.status = s.status;
      free_sol = s.x.segment(t0, ps.n_free);
    }
  }
  pr.va = Vec::Zero(grid.n_bus());
  for (int k = 0; k < grid.n_bus(); ++k)
    if (ps.free_col[k] >= 0) pr.va[k] = free_sol[ps.free_col[k]];
  return pr;
}

Reconstruction reconstruct(const Grid& grid, const SensingModel& model, const Vec& x_hat, const Vec& va_hat) {
  if (va_hat.size() != grid.n_bus()) throw Error(ErrorCode::kDimension, "angle vector length mismatch");
  Reconstruction rc;
  for (int k = 0; k < grid.n_bus(); ++k) {
    double mg = x_hat[model.mg_col[k]];
    if (mg < 0.0) {
      ++rc.clamped;
      mg = 0.0;
    }
    double vm = std::sqrt(mg);
    rc.vm.push_back(vm);
    rc.va.push_back(va_hat[k]);
    rc.v.push_back(std::polar(vm, va_hat[k]));
  }
  return rc;
}

ErrorBound step2_error_bound(const Grid& grid, const SensingModel& model, const Vec& x_true, const Vec& x_hat) {
  if (x_true.size() != model.n_x() || x_hat.size() != model.n_x())
    throw Error(ErrorCode::kDimension, "state length mismatch");
  ErrorBound eb;
  std::vector<int> used;
  for (int l : model.basis_branches())
    if (!(x_hat[model.re_col[l]] == 0.0 && x_hat[model.im_col[l]] == 0.0)) used.push_back(l);
  PhaseSystem ps = phase_system(grid, used);
  const int nl = static_cast<int>(ps.branches.size());
  Vec e = Vec::Zero(nl);
  for (int r = 0; r < nl; ++r) {
    int l = ps.branches[r];
    double re = x_true[model.re_col[l]], im = x_true[model.im_col[l]];
    double re_h = x_hat[model.re_col[l]], im_h = x_hat[model.im_col[l]];
    if (re == 0.0 || re_h == 0.0 || (re > 0.0) != (re_h > 0.0)) {
      ++eb.excluded;
      eb.partial = true;
      continue;
    }
    e[r] = std::abs((re * (im_h - im) - im * (re_h - re)) / (re * re_h));
  }
  eb.bound = Vec::Zero(grid.n_bus());
  if (ps.n_free == 0) return eb;
  Eigen::MatrixXd L = Eigen::MatrixXd(ps.L);
  Eigen::MatrixXd G = (L.transpose() * L).ldlt().solve(L.transpose());
  Vec bf = G.cwiseAbs() * e;
  for (int k = 0; k < grid.n_bus(); ++k)
    if (ps.free_col[k] >= 0) eb.bound[k] = bf[ps.free_col[k]];
  return eb;
}

EstimationResult estimate(const Grid& grid, const SensingModel& model, const Vec& y, const Step1Config& cfg,
                          Step2Variant step2, double lambda2) {
  EstimationResult res;
  Step1Output s1 = step1(model, grid, y, cfg);
  res.b_hat = s1.b_hat;
  res.solver_status = s1.status;
  res.objective = s1.objective;
  res.detected_support = detect_support(s1.b_hat, cfg.bdd_threshold);
  CleanResult cr = clean_and_resolve(model, grid, y, s1, cfg);
  res.x_hat = cr.x_hat;
  res.unobservable_cols = cr.unobservable_cols;
  PhaseResult ph = step2_phase(grid, model, res.x_hat, step2, lambda2, cfg.solver);
  Reconstruction rc = reconstruct(grid, model, res.x_hat, ph.va);
  res.vm_hat = rc.vm;
  res.va_hat = rc.va;
  res.clamped = rc.clamped;
  return res;
}

}  // namespace gs
