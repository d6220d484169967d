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

#include "gridshield/vulnerability.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "builder.hpp"
#include "pool.hpp"
#include "gridshield/error.hpp"

namespace gs {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using detail::ProblemBuilder;

namespace {

using RowMajor = Eigen::SparseMatrix<double, Eigen::RowMajor>;

std::vector<int> row_cols(const RowMajor& R, int row) {
  std::vector<int> out;
  for (RowMajor::InnerIterator it(R, row); it; ++it)
    if (it.value() != 0.0) out.push_back(static_cast<int>(it.col()));
  return out;
}

void sort_unique(std::vector<int>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

void require_vi(const SensingModel& model) {
  if (model.mode != RowNormMode::kVi)
    throw Error(ErrorCode::kInvalidArgument, "vulnerability indices need a model built in vi normalization mode");
}

}  // namespace

// ---------------------------------------------------------------------------
// Partition.

RegionPartition build_partition(const Grid& grid, const SensingModel& model, std::vector<int> attacked) {
  const int nb = grid.n_bus();
  if (attacked.empty()) throw Error(ErrorCode::kInvalidArgument, "attacked set is empty");
  for (int b : attacked)
    if (b < 0 || b >= nb) throw Error(ErrorCode::kInvalidArgument, fmt::format("attacked bus {} out of range", b));
  sort_unique(attacked);

  RegionPartition p;
  std::vector<char> at(nb, 0);
  for (int b : attacked) at[b] = 1;
  std::vector<int> region(nb, 0);  // 0 safe, 1 attacked, 2 inner, 3 outer
  for (;;) {
    if (std::count(at.begin(), at.end(), 1) == nb)
      throw Error(ErrorCode::kInvalidArgument, "attacked set covers every bus; the safe region is empty");
    std::vector<int> n_at(nb, 0);
    for (const Branch& br : grid.branches) {
      if (br.from_bus == br.to_bus) continue;
      if (at[br.from_bus] && !at[br.to_bus]) ++n_at[br.to_bus];
      if (at[br.to_bus] && !at[br.from_bus]) ++n_at[br.from_bus];
    }
    // Count distinct attacked neighbours rather than parallel lines.
    std::vector<char> shared(nb, 0);
    for (int k = 0; k < nb; ++k) {
      if (at[k] || n_at[k] < 2) continue;
      int distinct = 0;
      for (int u : grid.neighbors(k)) distinct += at[u];
      shared[k] = distinct >= 2;
    }
    int absorb = -1;
    std::string why;
    for (int k = 0; k < nb && absorb < 0; ++k)
      if (shared[k]) {
        absorb = k;
        why = fmt::format("bus {} touches several attacked buses", grid.buses[k].id);
      }
    if (absorb < 0) {
      for (const Branch& br : grid.branches) {
        int a = br.from_bus, b = br.to_bus;
        if (a == b || at[a] || at[b] || n_at[a] == 0 || n_at[b] == 0) continue;
        absorb = std::min(a, b);
        why = fmt::format("line {} joins inner buses {} and {}", br.id, grid.buses[a].id, grid.buses[b].id);
        break;
      }
    }
    if (absorb < 0) {
      for (int k = 0; k < nb; ++k) region[k] = at[k] ? 1 : (n_at[k] > 0 ? 2 : 0);
      break;
    }
    at[absorb] = 1;
    p.enlargement_log.push_back(fmt::format("absorbed bus {}: {}", grid.buses[absorb].id, why));
  }
  for (const Branch& br : grid.branches) {
    if (region[br.from_bus] == 2 && region[br.to_bus] == 0) region[br.to_bus] = 3;
    if (region[br.to_bus] == 2 && region[br.from_bus] == 0) region[br.from_bus] = 3;
  }
  for (int k = 0; k < nb; ++k) {
    switch (region[k]) {
      case 1: p.attacked.push_back(k); break;
      case 2: p.inner.push_back(k); break;
      case 3: p.outer.push_back(k); break;
      default: p.safe.push_back(k);
    }
  }

  // Line classes: 0 sf/other, 1 at, 2 at-bi, 3 bd.
  std::vector<int> lclass(grid.n_branch(), 0);
  for (const Branch& br : grid.branches) {
    int ra = region[br.from_bus], rb = region[br.to_bus];
    int c = 0;
    if (ra == 1 && rb == 1) c = 1;
    else if ((ra == 1 && rb == 2) || (ra == 2 && rb == 1)) c = 2;
    else if ((ra == 2 || ra == 3) && (rb == 2 || rb == 3)) c = 3;
    lclass[br.id] = c;
    if (c == 1) p.lines_at.push_back(br.id);
    if (c == 2) p.lines_at_bi.push_back(br.id);
    if (c == 3) p.lines_bd.push_back(br.id);
    if ((ra == 2 && rb == 3) || (ra == 3 && rb == 2)) p.lines_bi_bo.push_back(br.id);
    if (ra == 0 && rb == 0) p.lines_sf.push_back(br.id);
  }

  for (int i = 0; i < model.n_m(); ++i) {
    const Measurement& m = model.rows[i];
    int cls;  // 0 sf, 1 at, 2 bi, 3 bo
    if (m.kind == MeasKind::kVmag2) {
      int r = region[m.bus];
      cls = r == 1 ? 1 : (r == 2 || r == 3) ? 3 : 0;
    } else if (m.is_injection()) {
      int r = region[m.bus];
      cls = r == 1 ? 1 : r == 2 ? 2 : 0;
    } else {
      int c = lclass[m.branch];
      cls = c == 1 ? 1 : c == 2 ? 2 : c == 3 ? 3 : 0;
    }
    (cls == 1 ? p.m_at : cls == 2 ? p.m_bi : cls == 3 ? p.m_bo : p.m_sf).push_back(i);
  }
  for (int j = 0; j < model.n_x(); ++j) {
    const VariableIndex& v = model.cols[j];
    int cls;  // 0 sf, 1 at, 2 bd
    if (v.kind == VarKind::kMg) {
      int r = region[v.id];
      cls = r == 1 ? 1 : (r == 2 || r == 3) ? 2 : 0;
    } else {
      int c = lclass[v.id];
      cls = (c == 1 || c == 2) ? 1 : c == 3 ? 2 : 0;
    }
    (cls == 1 ? p.x_at : cls == 2 ? p.x_bd : p.x_sf).push_back(j);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Local boundary.

LocalBoundary local_boundary(const Grid& grid, const SensingModel& model, int branch, bool forward) {
  if (branch < 0 || branch >= grid.n_branch()) throw Error(ErrorCode::kInvalidArgument, "branch out of range");
  const Branch& br = grid.branches[branch];
  LocalBoundary lb;
  lb.branch = branch;
  lb.attacked_bus = forward ? br.from_bus : br.to_bus;
  lb.inner_bus = forward ? br.to_bus : br.from_bus;
  const int i = lb.attacked_bus, j = lb.inner_bus;

  std::vector<int> attacked_lines{branch};
  std::vector<int> outer_lines;
  for (const Incidence& inc : grid.adjacency[j]) {
    if (inc.branch == branch) continue;
    if (grid.other_end(inc.branch, j) == i)
      attacked_lines.push_back(inc.branch);
    else
      outer_lines.push_back(inc.branch);
  }
  std::vector<char> in_bd(model.n_x(), 0), allowed(model.n_x(), 0), on_line(model.n_x(), 0);
  auto add_bd = [&](int col) {
    if (col >= 0 && !in_bd[col]) {
      in_bd[col] = allowed[col] = 1;
      lb.cols.push_back(col);
    }
  };
  add_bd(model.mg_col[j]);
  for (int l : outer_lines) add_bd(model.mg_col[grid.other_end(l, j)]);
  for (int l : outer_lines) {
    add_bd(model.re_col[l]);
    add_bd(model.im_col[l]);
  }
  allowed[model.mg_col[i]] = 1;
  for (int l : attacked_lines)
    for (int c : {model.re_col[l], model.im_col[l]})
      if (c >= 0) allowed[c] = on_line[c] = 1;

  std::vector<char> on_attacked(grid.n_branch(), 0);
  for (int l : attacked_lines) on_attacked[l] = 1;
  lb.lines = {branch};
  for (int l : outer_lines) lb.lines.push_back(l);

  RowMajor R = model.A;
  for (int r = 0; r < model.n_m(); ++r) {
    std::vector<int> cols = row_cols(R, r);
    if (cols.empty()) continue;
    bool only_bd = true, only_allowed = true, touches_line = false;
    for (int c : cols) {
      only_bd &= in_bd[c] != 0;
      only_allowed &= allowed[c] != 0;
      touches_line |= on_line[c] != 0;
    }
    const Measurement& m = model.rows[r];
    // Defective rows are the inner-boundary sensors: flows on the attacked
    // line at either end and injections at the inner bus.
    bool boundary_row = m.is_flow() ? on_attacked[m.branch] != 0 : m.is_injection() && m.bus == j;
    if (only_bd)
      lb.rows_ok.push_back(r);
    else if (only_allowed && touches_line && boundary_row)
      lb.rows_x.push_back(r);
  }
  lb.empty_flag = outer_lines.empty() && lb.rows_ok.empty() && lb.rows_x.empty();
  return lb;
}

ViSystem line_system(const Grid& grid, const SensingModel& model, const LocalBoundary& lb, const Vec* x_lifted) {
  ViSystem s;
  s.A_ok = dense_block(model.A, lb.rows_ok, lb.cols);
  s.A_x = dense_block(model.A, lb.rows_x, lb.cols);
  const int k = static_cast<int>(lb.cols.size());
  if (!x_lifted) {
    s.T = Mat::Zero(k, 0);
    return s;
  }
  if (x_lifted->size() != model.n_x()) throw Error(ErrorCode::kDimension, "lifted state length mismatch");
  std::vector<int> pos(model.n_x(), -1);
  for (int c = 0; c < k; ++c) pos[lb.cols[c]] = c;
  std::vector<int> cone_of(grid.n_branch(), -1);
  std::vector<BranchCone> cones = branch_cones(model, grid);
  for (size_t c = 0; c < cones.size(); ++c) cone_of[cones[c].branch] = static_cast<int>(c);
  std::vector<Vec> cols;
  for (int l : lb.lines) {
    if (cone_of[l] < 0) continue;
    Vec t = Vec::Zero(k);
    for (auto [col, v] : t_times_x(cones[cone_of[l]], *x_lifted))
      if (pos[col] >= 0) t[pos[col]] += v;
    cols.push_back(t);
  }
  s.T = Mat::Zero(k, static_cast<int>(cols.size()));
  for (size_t c = 0; c < cols.size(); ++c) s.T.col(static_cast<int>(c)) = cols[c];
  return s;
}

// ---------------------------------------------------------------------------
// Minimax index.

const char* to_string(ViMethod m) {
  switch (m) {
    case ViMethod::kEnumeration: return "enumeration";
    case ViMethod::kLcp: return "lcp";
    case ViMethod::kMip: return "mip";
  }
  return "?";
}

ViMethod parse_vi_method(const std::string& s) {
  if (s == "enumeration") return ViMethod::kEnumeration;
  if (s == "lcp") return ViMethod::kLcp;
  if (s == "mip") return ViMethod::kMip;
  throw Error(ErrorCode::kConfig, fmt::format("unknown VI method '{}'", s));
}

namespace {

// Drops all-zero rows of A_x and zero columns of T.
struct Reduced {
  ViSystem sys;
  std::vector<int> xi_rows;
};

Reduced reduce(const ViSystem& s) {
  Reduced r;
  for (int i = 0; i < s.A_x.rows(); ++i)
    if (s.A_x.row(i).cwiseAbs().maxCoeff() > 0.0) r.xi_rows.push_back(i);
  r.sys.A_ok = s.A_ok;
  r.sys.A_x.resize(static_cast<int>(r.xi_rows.size()), s.A_x.cols());
  for (size_t i = 0; i < r.xi_rows.size(); ++i) r.sys.A_x.row(static_cast<int>(i)) = s.A_x.row(r.xi_rows[i]);
  std::vector<int> tc;
  for (int c = 0; c < s.T.cols(); ++c)
    if (s.T.col(c).cwiseAbs().maxCoeff() > 0.0) tc.push_back(c);
  r.sys.T.resize(s.A_x.cols(), static_cast<int>(tc.size()));
  for (size_t c = 0; c < tc.size(); ++c) r.sys.T.col(static_cast<int>(c)) = s.T.col(tc[c]);
  return r;
}

struct InnerSolve {
  double value = 0.0;
  double gap = 0.0;
};

InnerSolve solve_inner(const ViSystem& s, const Vec& xi, const SolveOptions& lp) {
  const int n_ok = static_cast<int>(s.A_ok.rows());
  const int k = static_cast<int>(s.A_ok.cols());
  const int nl = static_cast<int>(s.T.cols());
  ProblemBuilder B;
  const int a = B.add_vars(1, 0.0, kInf);
  const int h0 = B.add_vars(n_ok);
  const int w0 = B.add_vars(nl, 0.0, kInf);
  B.set_cost(a, 1.0);
  Vec rhs = -(s.A_x.transpose() * xi);
  for (int c = 0; c < k; ++c) {
    std::vector<std::pair<int, double>> terms;
    for (int r = 0; r < n_ok; ++r) terms.emplace_back(h0 + r, s.A_ok(r, c));
    for (int l = 0; l < nl; ++l) terms.emplace_back(w0 + l, s.T(c, l));
    B.add_eq(terms, rhs[c]);
  }
  for (int r = 0; r < n_ok; ++r) {
    B.add_le({{h0 + r, 1.0}, {a, -1.0}}, 0.0);
    B.add_le({{h0 + r, -1.0}, {a, -1.0}}, 0.0);
  }
  Solution sol = solve(B.build(), lp);
  InnerSolve out;
  if (sol.status == SolveStatus::kInfeasible) {
    out.value = kInf;
    return out;
  }
  if (sol.status == SolveStatus::kUnbounded)
    throw Error(ErrorCode::kSolver, "inner vulnerability program reported unbounded");
  out.value = std::max(0.0, sol.x[a]);
  out.gap = std::abs(sol.primal_obj - sol.dual_obj);
  return out;
}

ViValue enumerate(const ViSystem& s, const SolveOptions& lp) {
  const int d = static_cast<int>(s.A_x.rows());
  const bool symmetric = s.T.cols() == 0;
  ViValue v;
  v.method = ViMethod::kEnumeration;
  v.alpha = -1.0;
  const long total = 1L << d;
  for (long mask = 0; mask < total; ++mask) {
    if (symmetric && d > 0 && (mask & 1L)) continue;  // xi and -xi share the value
    Vec xi(d);
    for (int i = 0; i < d; ++i) xi[i] = (mask >> i) & 1L ? -1.0 : 1.0;
    InnerSolve in = solve_inner(s, xi, lp);
    ++v.subproblems;
    if (in.value > v.alpha) {
      v.alpha = in.value;
      v.xi = xi;
      v.certificate_gap = in.gap;
    }
    if (std::isinf(v.alpha)) break;
  }
  return v;
}

// Bounds on |(A_x lambda)_k| over the inner dual feasible set, or nullopt
// when one of them is unbounded.
std::optional<std::vector<double>> dual_bounds(const ViSystem& s, const SolveOptions& lp) {
  const int n_ok = static_cast<int>(s.A_ok.rows());
  const int k = static_cast<int>(s.A_ok.cols());
  const int nl = static_cast<int>(s.T.cols());
  const int d = static_cast<int>(s.A_x.rows());
  std::vector<double> U(d, 0.0);
  for (int r = 0; r < d; ++r) {
    for (double sign : {1.0, -1.0}) {
      ProblemBuilder B;
      const int l0 = B.add_vars(k);
      const int mp = B.add_vars(n_ok, 0.0, kInf);
      const int mm = B.add_vars(n_ok, 0.0, kInf);
      for (int c = 0; c < k; ++c) B.set_cost(l0 + c, -sign * s.A_x(r, c));
      for (int i = 0; i < n_ok; ++i) {
        std::vector<std::pair<int, double>> t;
        for (int c = 0; c < k; ++c) t.emplace_back(l0 + c, s.A_ok(i, c));
        t.emplace_back(mp + i, 1.0);
        t.emplace_back(mm + i, -1.0);
        B.add_eq(t, 0.0);
      }
      std::vector<std::pair<int, double>> sum;
      for (int i = 0; i < n_ok; ++i) {
        sum.emplace_back(mp + i, 1.0);
        sum.emplace_back(mm + i, 1.0);
      }
      B.add_eq(sum, 1.0);
      for (int l = 0; l < nl; ++l) {
        std::vector<std::pair<int, double>> t;
        for (int c = 0; c < k; ++c) t.emplace_back(l0 + c, -s.T(c, l));
        B.add_le(t, 0.0);
      }
      Solution sol = solve(B.build(), lp);
      if (sol.status == SolveStatus::kUnbounded) return std::nullopt;
      if (sol.status == SolveStatus::kInfeasible)
        throw Error(ErrorCode::kSolver, "vulnerability dual set reported empty");
      U[r] = std::max(U[r], -sol.primal_obj);
    }
    U[r] = std::max(U[r], 0.0) * (1.0 + 1e-6) + 1e-9;
  }
  return U;
}

ViValue complementarity(const ViSystem& s, const ViOptions& o, ViMethod method) {
  const int n_ok = static_cast<int>(s.A_ok.rows());
  const int k = static_cast<int>(s.A_ok.cols());
  const int nl = static_cast<int>(s.T.cols());
  const int d = static_cast<int>(s.A_x.rows());
  ViValue v;
  v.method = method;
  auto U = dual_bounds(s, o.lp);
  v.subproblems = 2L * d;
  if (!U) {
    v.alpha = kInf;
    v.xi = Vec::Ones(d);
    return v;
  }

  LcpSystem sys;
  ProblemBuilder B;
  const int x0 = B.add_vars(d, -1.0, 1.0);
  const int a = B.add_vars(1, 0.0, kInf);
  const int h0 = B.add_vars(n_ok);
  const int qp = B.add_vars(n_ok, 0.0, kInf);
  const int qm = B.add_vars(n_ok, 0.0, kInf);
  const int mp = B.add_vars(n_ok, 0.0, kInf);
  const int mm = B.add_vars(n_ok, 0.0, kInf);
  const int l0 = B.add_vars(k);
  const int w0 = B.add_vars(nl, 0.0, kInf);
  const int nu0 = B.add_vars(nl, 0.0, kInf);
  for (int c = 0; c < k; ++c) {
    std::vector<std::pair<int, double>> t;
    for (int r = 0; r < n_ok; ++r) t.emplace_back(h0 + r, s.A_ok(r, c));
    for (int r = 0; r < d; ++r) t.emplace_back(x0 + r, s.A_x(r, c));
    for (int l = 0; l < nl; ++l) t.emplace_back(w0 + l, s.T(c, l));
    B.add_eq(t, 0.0);
  }
  for (int r = 0; r < n_ok; ++r) {
    B.add_eq({{qp + r, 1.0}, {h0 + r, 1.0}, {a, -1.0}}, 0.0);
    B.add_eq({{qm + r, 1.0}, {h0 + r, -1.0}, {a, -1.0}}, 0.0);
    std::vector<std::pair<int, double>> t;
    for (int c = 0; c < k; ++c) t.emplace_back(l0 + c, s.A_ok(r, c));
    t.emplace_back(mp + r, 1.0);
    t.emplace_back(mm + r, -1.0);
    B.add_eq(t, 0.0);
  }
  std::vector<std::pair<int, double>> sum;
  for (int r = 0; r < n_ok; ++r) {
    sum.emplace_back(mp + r, 1.0);
    sum.emplace_back(mm + r, 1.0);
  }
  B.add_eq(sum, 1.0);
  for (int l = 0; l < nl; ++l) {
    std::vector<std::pair<int, double>> t;
    for (int c = 0; c < k; ++c) t.emplace_back(l0 + c, s.T(c, l));
    t.emplace_back(nu0 + l, -1.0);
    B.add_eq(t, 0.0);
  }
  sys.lp = B.build();
  sys.objective = Vec::Zero(B.n());
  sys.objective[a] = 1.0;
  for (int r = 0; r < n_ok; ++r) {
    sys.pairs.emplace_back(mp + r, qp + r);
    sys.pairs.emplace_back(mm + r, qm + r);
  }
  for (int l = 0; l < nl; ++l) sys.pairs.emplace_back(nu0 + l, w0 + l);
  for (int r = 0; r < d; ++r) sys.vertex_vars.push_back(x0 + r);
  sys.cut.lhs = a;
  double usum = 0.0;
  for (int r = 0; r < d; ++r) {
    sys.cut.xi.push_back(x0 + r);
    Eigen::SparseVector<double> row(B.n());
    for (int c = 0; c < k; ++c)
      if (s.A_x(r, c) != 0.0) row.insert(l0 + c) = s.A_x(r, c);
    sys.cut.rows.push_back(row);
    sys.cut.bound.push_back((*U)[r]);
    usum += (*U)[r];
  }

  LcpOptions lo;
  lo.mode = method == ViMethod::kMip ? LcpMode::kBigM : LcpMode::kDisjunctive;
  lo.lp = o.lp;
  lo.big_m = o.big_m > 0.0 ? o.big_m : 10.0 * (1.0 + 2.0 * usum);
  LcpResult res;
  for (int attempt = 0;; ++attempt) {
    res = solve_lcp(sys, lo);
    v.subproblems += res.nodes;
    if (!res.big_m_too_small) break;
    if (attempt >= o.big_m_retries)
      throw Error(ErrorCode::kBigMTooSmall,
                  fmt::format("complementarity bound {} still binding after {} increases", lo.big_m, attempt));
    lo.big_m *= 10.0;
  }
  if (res.status == SolveStatus::kUnbounded) {
    v.alpha = kInf;
    v.xi = Vec::Ones(d);
    return v;
  }
  if (res.status != SolveStatus::kOptimal)
    throw Error(ErrorCode::kSolver, fmt::format("complementarity search ended with status {}", to_string(res.status)));
  v.xi.resize(d);
  for (int r = 0; r < d; ++r) v.xi[r] = res.v[x0 + r] >= 0.0 ? 1.0 : -1.0;
  // Re-evaluate the inner program at the sign vector found by the search.
  InnerSolve polish = solve_inner(s, v.xi, o.lp);
  v.alpha = polish.value;
  v.certificate_gap = std::abs(res.objective - polish.value);
  return v;
}

}  // namespace

double inner_value(const ViSystem& sys, const Vec& xi, const SolveOptions& lp) {
  if (xi.size() != sys.A_x.rows()) throw Error(ErrorCode::kDimension, "xi length mismatch");
  return solve_inner(sys, xi, lp).value;
}

ViValue vulnerability_index(const ViSystem& full, const ViOptions& o) {
  if (full.A_ok.cols() != full.A_x.cols() || full.T.rows() != full.A_x.cols())
    throw Error(ErrorCode::kDimension, "vulnerability system blocks disagree on the column count");
  if (o.enumeration_cap < 0 || o.enumeration_cap > 30)
    throw Error(ErrorCode::kInvalidArgument, "enumeration cap must lie in [0, 30]");
  Reduced red = reduce(full);
  const ViSystem& s = red.sys;
  const int d = static_cast<int>(s.A_x.rows());
  ViValue v;
  v.method = o.method;
  if (d == 0) {
    v.alpha = 0.0;
  } else {
    ViMethod m = o.method;
    if (m == ViMethod::kEnumeration && d > o.enumeration_cap) m = ViMethod::kLcp;
    // Without defending rows the dual set is empty; the inner value is 0 or +inf.
    if (s.A_ok.rows() == 0 && d <= 20) m = ViMethod::kEnumeration;
    v = m == ViMethod::kEnumeration ? enumerate(s, o.lp) : complementarity(s, o, m);
  }
  Vec xi = Vec::Ones(full.A_x.rows());
  for (size_t i = 0; i < red.xi_rows.size(); ++i) xi[red.xi_rows[i]] = v.xi[static_cast<int>(i)];
  v.xi = xi;
  return v;
}

namespace {

LineVIResult line_vi(const Grid& grid, const SensingModel& model, int branch, bool forward, const Vec* x,
                     const ViOptions& o) {
  require_vi(model);
  LocalBoundary lb = local_boundary(grid, model, branch, forward);
  LineVIResult r;
  r.branch = branch;
  r.forward = forward;
  ViValue lp = vulnerability_index(line_system(grid, model, lb, nullptr), o);
  r.alpha_lp = lp.alpha;
  r.method = lp.method;
  r.xi_star = lp.xi;
  r.certificate_gap = lp.certificate_gap;
  if (x) {
    ViValue soc = vulnerability_index(line_system(grid, model, lb, x), o);
    r.alpha_socp = soc.alpha;
    r.xi_star = soc.xi;
    r.certificate_gap = std::max(r.certificate_gap, soc.certificate_gap);
  }
  return r;
}

}  // namespace

LineVIResult line_vi_lp(const Grid& grid, const SensingModel& model, int branch, bool forward, const ViOptions& o) {
  return line_vi(grid, model, branch, forward, nullptr, o);
}

LineVIResult line_vi_socp(const Grid& grid, const SensingModel& model, int branch, bool forward, const Vec& x,
                          const ViOptions& o) {
  return line_vi(grid, model, branch, forward, &x, o);
}

// ---------------------------------------------------------------------------
// Certificates.

double matrix_norm(const Mat& M, MatrixNorm norm) {
  if (M.size() == 0) return 0.0;
  if (norm == MatrixNorm::kMaxColumnSum) return M.cwiseAbs().colwise().sum().maxCoeff();
  return M.cwiseAbs().rowwise().sum().maxCoeff();
}

double incoherence(const Mat& A_clean, const Mat& A_bad, MatrixNorm norm) {
  if (A_clean.cols() != A_bad.cols()) throw Error(ErrorCode::kDimension, "incoherence blocks disagree on columns");
  if (A_bad.rows() == 0) return 0.0;
  Eigen::ColPivHouseholderQR<Mat> qr(A_clean);
  qr.setThreshold(1e-10);
  if (A_clean.rows() < A_clean.cols() || qr.rank() < A_clean.cols()) {
    Eigen::FullPivLU<Mat> lu(A_clean.transpose() * A_clean);
    lu.setThreshold(1e-10);
    Mat ker = lu.kernel();
    std::vector<int> bad;
    for (int c = 0; c < ker.rows(); ++c)
      if (ker.row(c).cwiseAbs().maxCoeff() > 1e-8) bad.push_back(c);
    throw Error(ErrorCode::kRankDeficient, fmt::format("clean block lacks full column rank; deficient columns: {}",
                                                       fmt::join(bad, ",")));
  }
  // pinv(A') = A (A'A)^{-1}
  Mat G = A_clean.transpose() * A_clean;
  Mat M = A_clean * G.ldlt().solve(A_bad.transpose());
  return matrix_norm(M, norm);
}

double mutual_incoherence(const SensingModel& model, const std::vector<int>& J, MatrixNorm norm) {
  std::vector<char> in(model.n_m(), 0);
  for (int i : J) {
    if (i < 0 || i >= model.n_m()) throw Error(ErrorCode::kInvalidArgument, "row index out of range");
    in[i] = 1;
  }
  std::vector<int> Jc, Js;
  for (int i = 0; i < model.n_m(); ++i) (in[i] ? Js : Jc).push_back(i);
  std::vector<int> cols(model.n_x());
  std::iota(cols.begin(), cols.end(), 0);
  return incoherence(dense_block(model.A, Jc, cols), dense_block(model.A, Js, cols), norm);
}

std::optional<double> line_incoherence(const Grid& grid, const SensingModel& model, int branch, bool forward,
                                       MatrixNorm norm) {
  require_vi(model);
  LocalBoundary lb = local_boundary(grid, model, branch, forward);
  ViSystem s = line_system(grid, model, lb, nullptr);
  try {
    return incoherence(s.A_ok, s.A_x, norm);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kRankDeficient) return std::nullopt;
    throw;
  }
}

namespace {

double min_eig(const Mat& B) {
  if (B.cols() == 0) return kInf;
  if (B.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(B.transpose() * B, Eigen::EigenvaluesOnly);
  return std::max(0.0, es.eigenvalues().minCoeff());
}

}  // namespace

LowerEigenvalue lower_eigenvalue(const SensingModel& model, const RegionPartition& p) {
  LowerEigenvalue le;
  std::vector<int> m_bd = p.m_bi;
  m_bd.insert(m_bd.end(), p.m_bo.begin(), p.m_bo.end());
  Mat Abd = dense_block(model.A, m_bd, p.x_bd);
  const int nbi = static_cast<int>(p.m_bi.size());
  Mat Q = Mat::Zero(Abd.rows(), Abd.cols() + nbi);
  Q.leftCols(Abd.cols()) = Abd;
  for (int i = 0; i < nbi; ++i) Q(i, Abd.cols() + i) = 1.0;
  le.boundary_q = min_eig(Q);
  le.outer = min_eig(dense_block(model.A, p.m_bo, p.x_bd));
  le.safe = min_eig(dense_block(model.A, p.m_sf, p.x_sf));
  le.value = std::min({le.boundary_q, le.outer, le.safe});
  if (std::isinf(le.value)) le.value = 0.0;
  return le;
}

// ---------------------------------------------------------------------------
// Classification.

VulnerabilityReport classify(const Grid& grid, std::vector<LineVIResult> fwd, std::vector<LineVIResult> bwd,
                             bool use_socp) {
  const int nl = grid.n_branch(), nb = grid.n_bus();
  if (static_cast<int>(fwd.size()) != nl || static_cast<int>(bwd.size()) != nl)
    throw Error(ErrorCode::kDimension, "classify needs both directional results for every branch");
  auto alpha = [&](const LineVIResult& r) {
    if (use_socp) {
      if (!r.alpha_socp) throw Error(ErrorCode::kInvalidArgument, "missing SOCP index");
      return *r.alpha_socp;
    }
    return r.alpha_lp;
  };
  VulnerabilityReport rep;
  rep.v_line.assign(nl, 0);
  rep.c_line.assign(nl, 0);
  rep.robust.assign(nl, 0);
  rep.c_bus.assign(nb, 0);
  rep.critical_index.assign(nb, 0);
  // Outward vulnerability from `bus` along branch l.
  auto out_vul = [&](int l, int bus) {
    const Branch& br = grid.branches[l];
    double a = bus == br.from_bus ? alpha(fwd[l]) : alpha(bwd[l]);
    return a >= 1.0;
  };
  for (int l = 0; l < nl; ++l) {
    double m = std::max(alpha(fwd[l]), alpha(bwd[l]));
    rep.v_line[l] = m >= 1.0;
    rep.robust[l] = !rep.v_line[l];
  }
  for (int k = 0; k < nb; ++k)
    for (const Incidence& inc : grid.adjacency[k])
      if (out_vul(inc.branch, k)) rep.c_bus[k] = 1;
  for (int l = 0; l < nl; ++l) {
    const Branch& br = grid.branches[l];
    for (int j : {br.from_bus, br.to_bus})
      for (const Incidence& inc : grid.adjacency[j])
        if (inc.branch != l && out_vul(inc.branch, j)) rep.c_line[l] = 1;
  }
  for (int root = 0; root < nb; ++root) {
    std::vector<char> seen(nb, 0);
    std::vector<int> stack{root};
    seen[root] = 1;
    int count = 0;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (const Incidence& inc : grid.adjacency[u]) {
        int v = grid.other_end(inc.branch, u);
        if (seen[v] || !out_vul(inc.branch, u)) continue;
        seen[v] = 1;
        ++count;
        stack.push_back(v);
      }
    }
    rep.critical_index[root] = count;
  }
  auto frac = [](const std::vector<char>& f) {
    return f.empty() ? 0.0 : static_cast<double>(std::count(f.begin(), f.end(), 1)) / static_cast<double>(f.size());
  };
  rep.v_line_fraction = frac(rep.v_line);
  rep.c_line_fraction = frac(rep.c_line);
  rep.c_bus_fraction = frac(rep.c_bus);
  double ci = 0.0;
  for (int c : rep.critical_index) ci += c;
  rep.mean_critical_index = nb ? ci / nb : 0.0;
  rep.forward = std::move(fwd);
  rep.backward = std::move(bwd);
  return rep;
}

VulnerabilityReport vulnerability_report(const Grid& grid, const SensingModel& model, const ReportOptions& o) {
  require_vi(model);
  if (o.socp && !o.x_lifted) throw Error(ErrorCode::kInvalidArgument, "SOCP report needs a lifted state");
  const int nl = grid.n_branch();
  std::vector<LineVIResult> res(2 * static_cast<size_t>(nl));
  auto errors = detail::parallel_for(2 * nl, o.threads, [&](int t) {
    int l = t / 2;
    bool fwd = t % 2 == 0;
    res[t] = o.socp ? line_vi_socp(grid, model, l, fwd, *o.x_lifted, o.vi) : line_vi_lp(grid, model, l, fwd, o.vi);
  });
  for (size_t t = 0; t < errors.size(); ++t)
    if (!errors[t].empty())
      throw Error(ErrorCode::kSolver, fmt::format("line {} direction {}: {}", t / 2, t % 2 ? "backward" : "forward",
                                                  errors[t]));
  std::vector<LineVIResult> f(nl), b(nl);
  for (int l = 0; l < nl; ++l) {
    f[l] = res[2 * l];
    b[l] = res[2 * l + 1];
  }
  return classify(grid, std::move(f), std::move(b), o.socp);
}

// ---------------------------------------------------------------------------
// Tree decomposition.

TreeDecomposition tree_decompose(int n, const std::vector<std::pair<int, int>>& edges, EliminationHeuristic heur) {
  std::vector<std::set<int>> adj(n);
  for (auto [a, b] : edges) {
    if (a < 0 || b < 0 || a >= n || b >= n) throw Error(ErrorCode::kInvalidArgument, "edge endpoint out of range");
    if (a == b) continue;
    adj[a].insert(b);
    adj[b].insert(a);
  }
  std::vector<char> gone(n, 0);
  std::vector<int> pos(n, -1), order;
  std::vector<std::vector<int>> bag_of(n);
  auto fill_in = [&](int v) {
    long f = 0;
    for (auto i = adj[v].begin(); i != adj[v].end(); ++i)
      for (auto j = std::next(i); j != adj[v].end(); ++j)
        if (!adj[*i].count(*j)) ++f;
    return f;
  };
  for (int step = 0; step < n; ++step) {
    int best = -1;
    long best_key1 = 0, best_key2 = 0;
    for (int v = 0; v < n; ++v) {
      if (gone[v]) continue;
      long deg = static_cast<long>(adj[v].size());
      long k1 = heur == EliminationHeuristic::kMinFill ? fill_in(v) : deg;
      long k2 = heur == EliminationHeuristic::kMinFill ? deg : 0;
      if (best < 0 || k1 < best_key1 || (k1 == best_key1 && k2 < best_key2)) {
        best = v;
        best_key1 = k1;
        best_key2 = k2;
      }
    }
    int v = best;
    std::vector<int> nb(adj[v].begin(), adj[v].end());
    bag_of[v] = nb;
    bag_of[v].push_back(v);
    std::sort(bag_of[v].begin(), bag_of[v].end());
    for (size_t i = 0; i < nb.size(); ++i)
      for (size_t j = i + 1; j < nb.size(); ++j) {
        adj[nb[i]].insert(nb[j]);
        adj[nb[j]].insert(nb[i]);
      }
    for (int u : nb) adj[u].erase(v);
    adj[v].clear();
    gone[v] = 1;
    pos[v] = step;
    order.push_back(v);
  }
  // Bag of v hangs below the bag of its earliest-eliminated later neighbour.
  std::vector<int> parent(n, -1);
  for (int v = 0; v < n; ++v) {
    int p = -1;
    for (int u : bag_of[v])
      if (u != v && (p < 0 || pos[u] < pos[p])) p = u;
    parent[v] = p;
  }
  // Chain the roots of separate components together.
  int prev_root = -1;
  for (int v : order)
    if (parent[v] < 0) {
      if (prev_root >= 0) parent[prev_root] = v;
      prev_root = v;
    }
  // Contract bags contained in their parent.
  std::vector<int> rep(n);
  std::iota(rep.begin(), rep.end(), 0);
  std::function<int(int)> find = [&](int v) { return rep[v] == v ? v : rep[v] = find(rep[v]); };
  for (int v : order) {
    int p = parent[v];
    if (p < 0) continue;
    int rp = find(p);
    const auto& a = bag_of[v];
    const auto& b = bag_of[rp];
    if (std::includes(b.begin(), b.end(), a.begin(), a.end())) rep[v] = rp;
  }
  // A parent contained in its only child is absorbed the other way round.
  TreeDecomposition td;
  std::vector<int> id(n, -1);
  for (int v = 0; v < n; ++v)
    if (find(v) == v) {
      id[v] = static_cast<int>(td.bags.size());
      td.bags.push_back(bag_of[v]);
    }
  std::set<std::pair<int, int>> seen;
  for (int v = 0; v < n; ++v) {
    if (find(v) != v || parent[v] < 0) continue;
    int a = id[v], b = id[find(parent[v])];
    if (a == b) continue;
    auto e = std::minmax(a, b);
    if (seen.insert(e).second) td.edges.emplace_back(e.first, e.second);
  }
  td.width = 0;
  for (const auto& b : td.bags) td.width = std::max(td.width, static_cast<int>(b.size()) - 1);
  return td;
}

namespace {

std::vector<std::pair<int, int>> grid_edges(const Grid& grid) {
  std::vector<std::pair<int, int>> e;
  for (const Branch& br : grid.branches) e.emplace_back(br.from_bus, br.to_bus);
  return e;
}

}  // namespace

TreeDecomposition tree_decompose(const Grid& grid, EliminationHeuristic heur) {
  return tree_decompose(grid.n_bus(), grid_edges(grid), heur);
}

TreeCheck validate_tree(const TreeDecomposition& td, int n, const std::vector<std::pair<int, int>>& edges) {
  TreeCheck c;
  const int nbag = static_cast<int>(td.bags.size());
  std::vector<std::vector<int>> tadj(nbag);
  bool edges_ok = true;
  for (auto [a, b] : td.edges) {
    if (a < 0 || b < 0 || a >= nbag || b >= nbag || a == b) {
      edges_ok = false;
      continue;
    }
    tadj[a].push_back(b);
    tadj[b].push_back(a);
  }
  if (edges_ok && static_cast<int>(td.edges.size()) == std::max(0, nbag - 1)) {
    std::vector<char> seen(nbag, 0);
    std::vector<int> st;
    if (nbag > 0) {
      st.push_back(0);
      seen[0] = 1;
    }
    int cnt = nbag > 0 ? 1 : 0;
    while (!st.empty()) {
      int u = st.back();
      st.pop_back();
      for (int v : tadj[u])
        if (!seen[v]) {
          seen[v] = 1;
          ++cnt;
          st.push_back(v);
        }
    }
    c.is_tree = cnt == nbag;
  }
  std::vector<std::vector<int>> bags_of(n);
  bool range_ok = true;
  for (int t = 0; t < nbag; ++t)
    for (int v : td.bags[t]) {
      if (v < 0 || v >= n) {
        range_ok = false;
        continue;
      }
      bags_of[v].push_back(t);
    }
  c.node_coverage = range_ok;
  for (int v = 0; v < n; ++v)
    if (bags_of[v].empty()) c.node_coverage = false;
  c.edge_coverage = true;
  for (auto [a, b] : edges) {
    if (a == b) continue;
    bool found = false;
    if (a >= 0 && a < n)
      for (int t : bags_of[a]) {
        const auto& bg = td.bags[t];
        if (std::find(bg.begin(), bg.end(), b) != bg.end()) {
          found = true;
          break;
        }
      }
    if (!found) c.edge_coverage = false;
  }
  c.running_intersection = edges_ok;
  for (int v = 0; v < n && c.running_intersection; ++v) {
    const auto& ts = bags_of[v];
    if (ts.size() <= 1) continue;
    std::vector<char> member(nbag, 0), seen(nbag, 0);
    for (int t : ts) member[t] = 1;
    std::vector<int> st{ts[0]};
    seen[ts[0]] = 1;
    size_t cnt = 1;
    while (!st.empty()) {
      int u = st.back();
      st.pop_back();
      for (int w : tadj[u])
        if (member[w] && !seen[w]) {
          seen[w] = 1;
          ++cnt;
          st.push_back(w);
        }
    }
    if (cnt != ts.size()) c.running_intersection = false;
  }
  return c;
}

TreeCheck validate_tree(const TreeDecomposition& td, const Grid& grid) {
  return validate_tree(td, grid.n_bus(), grid_edges(grid));
}

BagAnalysis bag_vi(const Grid& grid, const SensingModel& model, const TreeDecomposition& td,
                   const std::vector<int>& attacked, bool socp, const Vec* x_lifted, const ViOptions& o) {
  require_vi(model);
  if (socp && !x_lifted) throw Error(ErrorCode::kInvalidArgument, "SOCP bag index needs a lifted state");
  const int nb = grid.n_bus();
  const int nbag = static_cast<int>(td.bags.size());
  std::vector<char> at(nb, 0);
  for (int b : attacked) {
    if (b < 0 || b >= nb) throw Error(ErrorCode::kInvalidArgument, "attacked bus out of range");
    at[b] = 1;
  }
  std::vector<std::vector<int>> tadj(nbag);
  for (auto [a, b] : td.edges) {
    tadj[a].push_back(b);
    tadj[b].push_back(a);
  }
  BagAnalysis out;
  std::vector<int> kind(nbag, 0);  // 0 safe, 1 infected, 2 link
  for (int t = 0; t < nbag; ++t)
    for (int v : td.bags[t])
      if (at[v]) kind[t] = 1;
  for (int t = 0; t < nbag; ++t) {
    if (kind[t] == 1) continue;
    for (int u : tadj[t])
      if (kind[u] == 1) kind[t] = 2;
  }
  for (int t = 0; t < nbag; ++t) (kind[t] == 1 ? out.infected : kind[t] == 2 ? out.link : out.safe).push_back(t);
  if (out.infected.empty()) {
    out.note = "no bag contains an attacked bus";
    return out;
  }
  {
    std::vector<char> seen(nbag, 0);
    std::vector<int> st{out.infected[0]};
    seen[out.infected[0]] = 1;
    size_t cnt = 1;
    while (!st.empty()) {
      int u = st.back();
      st.pop_back();
      for (int w : tadj[u])
        if (kind[w] == 1 && !seen[w]) {
          seen[w] = 1;
          ++cnt;
          st.push_back(w);
        }
    }
    out.infected_subtree = cnt == out.infected.size();
  }
  if (!out.infected_subtree) {
    out.note = "infected bags do not form a subtree";
    return out;
  }
  std::vector<char> in_infected(nb, 0);
  for (int t : out.infected)
    for (int v : td.bags[t]) in_infected[v] = 1;

  std::vector<int> cone_of(grid.n_branch(), -1);
  std::vector<BranchCone> cones = branch_cones(model, grid);
  for (size_t c = 0; c < cones.size(); ++c) cone_of[cones[c].branch] = static_cast<int>(c);

  for (int t : out.link) {
    std::vector<int> adj_inf;
    for (int u : tadj[t])
      if (kind[u] == 1) adj_inf.push_back(u);
    if (adj_inf.size() != 1) continue;
    BagVIResult r;
    r.link_bag = t;
    r.infected_bag = adj_inf[0];
    const auto& W = td.bags[t];
    const auto& F = td.bags[r.infected_bag];
    std::vector<char> inW(nb, 0), inF(nb, 0), ad(nb, 0);
    for (int v : W) inW[v] = 1;
    for (int v : F) inF[v] = 1;
    for (int v : W) (inF[v] ? r.adhesion : r.outer_link).push_back(v);
    for (int v : r.adhesion) ad[v] = 1;

    std::vector<int> induced;  // lines with both ends in W
    for (const Branch& br : grid.branches)
      if (inW[br.from_bus] && inW[br.to_bus]) induced.push_back(br.id);
    for (int v : W) r.x_lk.push_back(model.mg_col[v]);
    for (int l : induced)
      if (model.re_col[l] >= 0) {
        r.x_lk.push_back(model.re_col[l]);
        r.x_lk.push_back(model.im_col[l]);
      }
    // Lines from adhesion buses to infected buses outside this link bag.
    std::vector<char> is_ad_line(grid.n_branch(), 0), is_induced(grid.n_branch(), 0);
    for (int l : induced) is_induced[l] = 1;
    for (const Branch& br : grid.branches) {
      int a = br.from_bus, b = br.to_bus;
      if ((ad[a] && in_infected[b] && !inW[b]) || (ad[b] && in_infected[a] && !inW[a])) is_ad_line[br.id] = 1;
    }
    for (int i = 0; i < model.n_m(); ++i) {
      const Measurement& m = model.rows[i];
      if (m.is_injection() && ad[m.bus]) r.m_ad.push_back(i);
      else if (m.is_flow() && is_ad_line[m.branch]) r.m_ad.push_back(i);
      else if (m.kind == MeasKind::kVmag2 && inW[m.bus]) r.m_ol.push_back(i);
      else if (m.is_flow() && is_induced[m.branch]) r.m_ol.push_back(i);
    }
    ViSystem s;
    s.A_ok = dense_block(model.A, r.m_ol, r.x_lk);
    s.A_x = dense_block(model.A, r.m_ad, r.x_lk);
    const int k = static_cast<int>(r.x_lk.size());
    std::vector<Vec> tcols;
    if (socp) {
      if (x_lifted->size() != model.n_x()) throw Error(ErrorCode::kDimension, "lifted state length mismatch");
      std::vector<int> pos(model.n_x(), -1);
      for (int c = 0; c < k; ++c) pos[r.x_lk[c]] = c;
      for (int l : induced) {
        if (cone_of[l] < 0) continue;
        Vec tv = Vec::Zero(k);
        for (auto [col, v] : t_times_x(cones[cone_of[l]], *x_lifted))
          if (pos[col] >= 0) tv[pos[col]] += v;
        tcols.push_back(tv);
      }
    }
    s.T = Mat::Zero(k, static_cast<int>(tcols.size()));
    for (size_t c = 0; c < tcols.size(); ++c) s.T.col(static_cast<int>(c)) = tcols[c];
    ViValue v = vulnerability_index(s, o);
    r.alpha = v.alpha;
    r.method = v.method;
    out.results.push_back(std::move(r));
  }
  if (out.results.empty()) out.note = "no link bag is adjacent to exactly one infected bag";
  return out;
}

}  // namespace gs
