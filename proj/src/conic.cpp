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

#include "gridshield/conic.hpp"

#include <algorithm>
#include <cmath>

#include "gridshield/error.hpp"
#include "ldl.hpp"

namespace gs {

ConicProblem::ConicProblem(int n_vars)
    : n(n_vars),
      P(n_vars, n_vars),
      c(Eigen::VectorXd::Zero(n_vars)),
      A_eq(0, n_vars),
      b_eq(0),
      A_le(0, n_vars),
      b_le(0) {}

double ConicProblem::objective(const Eigen::VectorXd& x) const {
  double v = c.dot(x);
  if (P.nonZeros() > 0) {
    SpMat Pu = P.triangularView<Eigen::Upper>();
    Eigen::VectorXd px = Pu.selfadjointView<Eigen::Upper>() * x;
    v += 0.5 * x.dot(px);
  }
  return v;
}

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::kOptimal: return "optimal";
    case SolveStatus::kInfeasible: return "infeasible";
    case SolveStatus::kUnbounded: return "unbounded";
    case SolveStatus::kMaxIter: return "max_iter";
  }
  return "unknown";
}

bool strong_duality_holds(const Solution& s, double tol) {
  if (s.status != SolveStatus::kOptimal) return true;
  return std::abs(s.primal_obj - s.dual_obj) <= 10.0 * tol * std::max(1.0, std::abs(s.primal_obj));
}

namespace {

using Vec = Eigen::VectorXd;

// Cone layout over the slack rows: [zero | nonneg | soc_1 | soc_2 ...].
struct Cones {
  int m0 = 0;
  int ml = 0;
  std::vector<int> soc_off;
  std::vector<int> soc_dim;
  int m = 0;

  int degree() const { return ml + static_cast<int>(soc_dim.size()); }
};

// Standard form: min 1/2 x'Px + c'x  s.t.  A x + s = b, s in K.
struct Standard {
  int n = 0;
  SpMat P;  // full symmetric
  Vec c;
  SpMat A;
  Vec b;
  Cones K;
  // Row bookkeeping for multiplier recovery.
  int eq_rows = 0;
  std::vector<int> fixed_var;  // zero-cone rows after the equalities
  int le_rows = 0;
  std::vector<int> lb_var;
  std::vector<int> ub_var;
};

Standard to_standard(const ConicProblem& p) {
  const int n = p.n;
  if (p.c.size() != n) throw Error(ErrorCode::kDimension, "objective length mismatch");
  if (p.P.rows() != n || p.P.cols() != n) throw Error(ErrorCode::kDimension, "P dimension mismatch");
  if (p.A_eq.cols() != n || p.A_eq.rows() != p.b_eq.size())
    throw Error(ErrorCode::kDimension, "equality block dimension mismatch");
  if (p.A_le.cols() != n || p.A_le.rows() != p.b_le.size())
    throw Error(ErrorCode::kDimension, "inequality block dimension mismatch");
  if (p.lb.size() != 0 && p.lb.size() != n) throw Error(ErrorCode::kDimension, "lb length mismatch");
  if (p.ub.size() != 0 && p.ub.size() != n) throw Error(ErrorCode::kDimension, "ub length mismatch");
  for (const auto& cone : p.socs) {
    if (cone.empty()) throw Error(ErrorCode::kDimension, "empty cone");
    for (int i : cone)
      if (i < 0 || i >= n) throw Error(ErrorCode::kDimension, "cone index out of range");
  }

  Standard s;
  s.n = n;
  SpMat Pu = p.P.triangularView<Eigen::Upper>();
  s.P = Pu.selfadjointView<Eigen::Upper>();
  s.c = p.c;

  auto lo = [&](int i) { return p.lb.size() ? p.lb[i] : -kInf; };
  auto hi = [&](int i) { return p.ub.size() ? p.ub[i] : kInf; };
  for (int i = 0; i < n; ++i) {
    if (lo(i) > hi(i)) throw Error(ErrorCode::kInvalidArgument, "lb exceeds ub");
    if (std::isfinite(lo(i)) && lo(i) == hi(i)) {
      s.fixed_var.push_back(i);
    } else {
      if (std::isfinite(lo(i))) s.lb_var.push_back(i);
      if (std::isfinite(hi(i))) s.ub_var.push_back(i);
    }
  }

  s.eq_rows = static_cast<int>(p.A_eq.rows());
  s.le_rows = static_cast<int>(p.A_le.rows());
  int m0 = s.eq_rows + static_cast<int>(s.fixed_var.size());
  int ml = s.le_rows + static_cast<int>(s.lb_var.size() + s.ub_var.size());
  int msoc = 0;
  for (const auto& cone : p.socs) msoc += static_cast<int>(cone.size());
  int m = m0 + ml + msoc;

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(p.A_eq.nonZeros() + p.A_le.nonZeros() + n + msoc);
  s.b = Vec::Zero(m);
  for (int j = 0; j < p.A_eq.outerSize(); ++j)
    for (SpMat::InnerIterator it(p.A_eq, j); it; ++it) trip.emplace_back(it.row(), it.col(), it.value());
  for (int r = 0; r < s.eq_rows; ++r) s.b[r] = p.b_eq[r];
  int row = s.eq_rows;
  for (int i : s.fixed_var) {
    trip.emplace_back(row, i, 1.0);
    s.b[row++] = lo(i);
  }
  for (int j = 0; j < p.A_le.outerSize(); ++j)
    for (SpMat::InnerIterator it(p.A_le, j); it; ++it) trip.emplace_back(row + it.row(), it.col(), it.value());
  for (int r = 0; r < s.le_rows; ++r) s.b[row + r] = p.b_le[r];
  row += s.le_rows;
  for (int i : s.lb_var) {
    trip.emplace_back(row, i, -1.0);
    s.b[row++] = -lo(i);
  }
  for (int i : s.ub_var) {
    trip.emplace_back(row, i, 1.0);
    s.b[row++] = hi(i);
  }
  for (const auto& cone : p.socs) {
    s.K.soc_off.push_back(row);
    s.K.soc_dim.push_back(static_cast<int>(cone.size()));
    for (int i : cone) trip.emplace_back(row++, i, -1.0);
  }
  s.A.resize(m, n);
  s.A.setFromTriplets(trip.begin(), trip.end());
  s.K.m0 = m0;
  s.K.ml = ml;
  s.K.m = m;
  return s;
}

// ---- cone algebra ---------------------------------------------------------

double soc_residual(const double* u, int d) {
  double t = 0.0;
  for (int i = 1; i < d; ++i) t += u[i] * u[i];
  return u[0] - std::sqrt(t);
}

// Smallest eigenvalue-like margin across nonzero cones.
double cone_margin(const Cones& K, const Vec& u) {
  double a = kInf;
  for (int i = K.m0; i < K.m0 + K.ml; ++i) a = std::min(a, u[i]);
  for (size_t k = 0; k < K.soc_dim.size(); ++k) a = std::min(a, soc_residual(u.data() + K.soc_off[k], K.soc_dim[k]));
  return a;
}

void add_identity(const Cones& K, Vec& u, double t) {
  for (int i = K.m0; i < K.m0 + K.ml; ++i) u[i] += t;
  for (int off : K.soc_off) u[off] += t;
}

void shift_into_cone(const Cones& K, Vec& u) {
  for (int i = 0; i < K.m0; ++i) u[i] = 0.0;
  if (K.degree() == 0) return;
  double a = cone_margin(K, u);
  if (a < 1e-8) add_identity(K, u, 1.0 - a);
}

// Largest step in [0, inf) keeping u + a du in the closed cone.
double soc_max_step(const double* u, const double* du, int d) {
  double u1du1 = 0.0, du1 = 0.0, u1 = 0.0;
  for (int i = 1; i < d; ++i) {
    u1du1 += u[i] * du[i];
    du1 += du[i] * du[i];
    u1 += u[i] * u[i];
  }
  double a = du[0] * du[0] - du1;
  double b = 2.0 * (u[0] * du[0] - u1du1);
  double c = std::max(0.0, u[0] * u[0] - u1);
  double step = kInf;
  if (du[0] < 0.0) step = -u[0] / du[0];
  auto consider = [&](double r) {
    if (r > 0.0) step = std::min(step, r);
  };
  if (std::abs(a) < 1e-300) {
    if (b < 0.0) consider(-c / b);
  } else {
    double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0) {
      double q = -0.5 * (b + std::copysign(std::sqrt(disc), b));
      if (q != 0.0) {
        consider(q / a);
        consider(c / q);
      } else {
        consider(std::sqrt(std::max(0.0, -c / a)));
      }
    }
  }
  return step;
}

double cone_max_step(const Cones& K, const Vec& u, const Vec& du) {
  double step = kInf;
  for (int i = K.m0; i < K.m0 + K.ml; ++i)
    if (du[i] < 0.0) step = std::min(step, -u[i] / du[i]);
  for (size_t k = 0; k < K.soc_dim.size(); ++k)
    step = std::min(step, soc_max_step(u.data() + K.soc_off[k], du.data() + K.soc_off[k], K.soc_dim[k]));
  return step;
}

// Jordan product u o v.
Vec jordan(const Cones& K, const Vec& u, const Vec& v) {
  Vec r = Vec::Zero(K.m);
  for (int i = K.m0; i < K.m0 + K.ml; ++i) r[i] = u[i] * v[i];
  for (size_t k = 0; k < K.soc_dim.size(); ++k) {
    int o = K.soc_off[k], d = K.soc_dim[k];
    r[o] = u.segment(o, d).dot(v.segment(o, d));
    for (int i = 1; i < d; ++i) r[o + i] = u[o] * v[o + i] + v[o] * u[o + i];
  }
  return r;
}

// Solves lambda o x = r for x.
Vec jordan_div(const Cones& K, const Vec& lam, const Vec& r) {
  Vec x = Vec::Zero(K.m);
  for (int i = K.m0; i < K.m0 + K.ml; ++i) x[i] = r[i] / lam[i];
  for (size_t k = 0; k < K.soc_dim.size(); ++k) {
    int o = K.soc_off[k], d = K.soc_dim[k];
    double l0 = lam[o];
    double l1r1 = 0.0, l1l1 = 0.0;
    for (int i = 1; i < d; ++i) {
      l1r1 += lam[o + i] * r[o + i];
      l1l1 += lam[o + i] * lam[o + i];
    }
    double x0 = (l0 * r[o] - l1r1) / (l0 * l0 - l1l1);
    x[o] = x0;
    for (int i = 1; i < d; ++i) x[o + i] = (r[o + i] - x0 * lam[o + i]) / l0;
  }
  return x;
}

// Nesterov-Todd scaling W with W z = W^{-1} s = lambda.
struct Scaling {
  Vec w;                       // nonneg: sqrt(s/z)
  std::vector<double> eta;     // soc
  std::vector<Vec> wbar;       // soc
  std::vector<Eigen::MatrixXd> H;  // soc: W'W
};

void update_scaling(const Cones& K, const Vec& s, const Vec& z, Scaling& sc) {
  sc.w = Vec::Zero(K.m);
  for (int i = K.m0; i < K.m0 + K.ml; ++i) sc.w[i] = std::sqrt(s[i] / z[i]);
  size_t nk = K.soc_dim.size();
  sc.eta.assign(nk, 1.0);
  sc.wbar.resize(nk);
  sc.H.resize(nk);
  for (size_t k = 0; k < nk; ++k) {
    int o = K.soc_off[k], d = K.soc_dim[k];
    Vec sk = s.segment(o, d), zk = z.segment(o, d);
    double sn = std::sqrt(std::max(1e-300, sk[0] * sk[0] - sk.tail(d - 1).squaredNorm()));
    double zn = std::sqrt(std::max(1e-300, zk[0] * zk[0] - zk.tail(d - 1).squaredNorm()));
    Vec sb = sk / sn, zb = zk / zn;
    double gamma = std::sqrt(std::max(1e-300, (1.0 + sb.dot(zb)) / 2.0));
    Vec wb(d);
    wb[0] = (sb[0] + zb[0]) / (2.0 * gamma);
    wb.tail(d - 1) = (sb.tail(d - 1) - zb.tail(d - 1)) / (2.0 * gamma);
    double eta = std::sqrt(sn / zn);
    sc.eta[k] = eta;
    sc.wbar[k] = wb;
    Eigen::MatrixXd Hk = 2.0 * wb * wb.transpose();
    Hk(0, 0) -= 1.0;
    for (int i = 1; i < d; ++i) Hk(i, i) += 1.0;
    sc.H[k] = eta * eta * Hk;
  }
}

// y = W v (inverse = false) or W^{-1} v. W is symmetric.
Vec apply_w(const Cones& K, const Scaling& sc, const Vec& v, bool inverse) {
  Vec r = Vec::Zero(K.m);
  for (int i = K.m0; i < K.m0 + K.ml; ++i) r[i] = inverse ? v[i] / sc.w[i] : v[i] * sc.w[i];
  for (size_t k = 0; k < K.soc_dim.size(); ++k) {
    int o = K.soc_off[k], d = K.soc_dim[k];
    const Vec& wb = sc.wbar[k];
    double sgn = inverse ? -1.0 : 1.0;
    double scale = inverse ? 1.0 / sc.eta[k] : sc.eta[k];
    double w1v1 = 0.0;
    for (int i = 1; i < d; ++i) w1v1 += wb[i] * v[o + i];
    r[o] = scale * (wb[0] * v[o] + sgn * w1v1);
    double coef = sgn * v[o] + w1v1 / (1.0 + wb[0]);
    for (int i = 1; i < d; ++i) r[o + i] = scale * (v[o + i] + coef * wb[i]);
  }
  return r;
}

// ---- KKT system -----------------------------------------------------------

class Kkt {
 public:
  Kkt(const Standard& st, double reg) : st_(st), reg_(reg) {
    const int n = st.n;
    const Cones& K = st.K;
    dim_ = n + K.m;
    for (int j = 0; j < n; ++j)
      for (SpMat::InnerIterator it(st.P, j); it; ++it)
        if (it.row() >= j) push(it.row(), j, it.value(), kConst);
    for (int i = 0; i < n; ++i) push(i, i, 0.0, kRegX);
    for (int j = 0; j < n; ++j)
      for (SpMat::InnerIterator it(st.A, j); it; ++it) push(n + it.row(), j, it.value(), kConst);
    for (int i = 0; i < K.m0; ++i) push(n + i, n + i, 0.0, kRegZ);
    for (int i = K.m0; i < K.m0 + K.ml; ++i) push(n + i, n + i, 0.0, kScale);
    for (size_t k = 0; k < K.soc_dim.size(); ++k) {
      int o = K.soc_off[k], d = K.soc_dim[k];
      for (int a = 0; a < d; ++a)
        for (int b = 0; b <= a; ++b) push(n + o + a, n + o + b, 0.0, kScale);
    }
    ldl_.analyze(dim_, entries_);
    signs_.assign(dim_, 1);
    for (int i = n; i < dim_; ++i) signs_[i] = -1;
  }

  // h_nonneg: diagonal of W'W on nonneg rows; soc blocks from sc.H. nullptr: identity.
  void factor(const Scaling* sc) {
    const int n = st_.n;
    const Cones& K = st_.K;
    size_t t_soc = 0;
    std::vector<double> reg(vals_.size());
    for (size_t t = 0; t < entries_.size(); ++t) {
      auto [r, c] = entries_[t];
      double v = vals_[t];
      double stat = 0.0;
      switch (kind_[t]) {
        case kConst: break;
        case kRegX: stat = reg_; break;
        case kRegZ: stat = -reg_; break;
        case kScale: {
          int a = r - n, b = c - n;
          if (a < K.m0 + K.ml) {
            v = -(sc ? sc->w[a] * sc->w[a] : 1.0);
          } else {
            // locate the soc block containing row a
            while (t_soc + 1 < K.soc_off.size() && a >= K.soc_off[t_soc + 1]) ++t_soc;
            int o = K.soc_off[t_soc];
            v = sc ? -sc->H[t_soc](a - o, b - o) : (a == b ? -1.0 : 0.0);
          }
          if (r == c) stat = -reg_;
          break;
        }
      }
      true_[t] = v;
      reg[t] = v + stat;
    }
    ldl_.factor(reg, signs_);
  }

  // Solves with iterative refinement against the unregularized matrix.
  Vec solve(const Vec& rhs) const {
    Vec x = rhs;
    ldl_.solve(x);
    double bn = std::max(1.0, rhs.lpNorm<Eigen::Infinity>());
    for (int it = 0; it < 4; ++it) {
      Vec r = rhs - multiply(x);
      if (r.lpNorm<Eigen::Infinity>() <= 1e-13 * bn) break;
      ldl_.solve(r);
      x += r;
    }
    return x;
  }

 private:
  enum Kind { kConst, kRegX, kRegZ, kScale };
  void push(int r, int c, double v, Kind k) {
    entries_.emplace_back(r, c);
    vals_.push_back(v);
    true_.push_back(v);
    kind_.push_back(k);
  }
  Vec multiply(const Vec& x) const {
    Vec y = Vec::Zero(dim_);
    for (size_t t = 0; t < entries_.size(); ++t) {
      auto [r, c] = entries_[t];
      y[r] += true_[t] * x[c];
      if (r != c) y[c] += true_[t] * x[r];
    }
    return y;
  }

  const Standard& st_;
  double reg_;
  int dim_ = 0;
  std::vector<std::pair<int, int>> entries_;
  std::vector<double> vals_;
  std::vector<double> true_;
  std::vector<Kind> kind_;
  std::vector<int> signs_;
  detail::QuasiDefiniteLdl ldl_;
};

struct Iterate {
  Vec x, z, s;
  double tau = 1.0, kappa = 1.0;
};

struct Metrics {
  double res_p = kInf, res_d = kInf, gap_abs = kInf, gap_rel = kInf;
  double pobj = 0.0, dobj = 0.0;
  double merit() const { return std::max({res_p, res_d, std::min(gap_abs, gap_rel)}); }
};

Metrics measure(const Standard& st, const Iterate& it) {
  Metrics m;
  Vec x = it.x / it.tau, z = it.z / it.tau, s = it.s / it.tau;
  Vec px = st.P * x;
  Vec ax = st.A * x;
  Vec atz = st.A.transpose() * z;
  double xpx = x.dot(px);
  m.pobj = 0.5 * xpx + st.c.dot(x);
  m.dobj = -0.5 * xpx - st.b.dot(z);
  auto inf = [](const Vec& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; };
  double np = std::max({1.0, inf(st.b), inf(ax), inf(s)});
  double nd = std::max({1.0, inf(st.c), inf(px), inf(atz)});
  m.res_p = inf(ax + s - st.b) / np;
  m.res_d = inf(px + atz + st.c) / nd;
  m.gap_abs = std::abs(m.pobj - m.dobj);
  m.gap_rel = m.gap_abs / std::max(1.0, std::min(std::abs(m.pobj), std::abs(m.dobj)));
  return m;
}

Solution finish(const ConicProblem& p, const Standard& st, const Iterate& it, const Metrics& m,
                SolveStatus status, int iters) {
  Solution sol;
  sol.status = status;
  sol.iterations = iters;
  Vec x, z;
  if (status == SolveStatus::kInfeasible || status == SolveStatus::kUnbounded) {
    x = it.x;
    z = it.z;
    sol.primal_obj = status == SolveStatus::kInfeasible ? kInf : -kInf;
    sol.dual_obj = sol.primal_obj;
  } else {
    x = it.x / it.tau;
    z = it.z / it.tau;
    sol.primal_obj = m.pobj;
    sol.dual_obj = m.dobj;
    sol.kkt = {m.res_p, m.res_d, m.gap_abs};
  }
  sol.x = x;
  sol.y_eq = z.head(st.eq_rows);
  sol.z_lb = Vec::Zero(p.n);
  sol.z_ub = Vec::Zero(p.n);
  int row = st.eq_rows;
  for (int i : st.fixed_var) {
    double v = z[row++];
    if (v >= 0) sol.z_ub[i] = v; else sol.z_lb[i] = -v;
  }
  sol.z_le = z.segment(row, st.le_rows);
  row += st.le_rows;
  for (int i : st.lb_var) sol.z_lb[i] = z[row++];
  for (int i : st.ub_var) sol.z_ub[i] = z[row++];
  for (size_t k = 0; k < st.K.soc_dim.size(); ++k) sol.z_soc.push_back(z.segment(st.K.soc_off[k], st.K.soc_dim[k]));
  return sol;
}

}  // namespace

Solution InteriorPointSolver::solve(const ConicProblem& problem, const SolveOptions& opts) const {
  if (!(opts.tol > 0.0) || opts.max_iter <= 0) throw Error(ErrorCode::kInvalidArgument, "bad solver options");
  Standard st = to_standard(problem);
  const int n = st.n;
  const Cones& K = st.K;
  const int m = K.m;
  const double nu = K.degree();
  const double tol = opts.tol;
  const double tol_inf = 1e-8;

  Kkt kkt(st, opts.static_reg);
  Iterate it;
  kkt.factor(nullptr);
  if (st.P.nonZeros() == 0) {
    Vec rhs(n + m);
    rhs << Vec::Zero(n), st.b;
    Vec sol = kkt.solve(rhs);
    it.x = sol.head(n);
    it.s = -sol.tail(m);
    rhs << -st.c, Vec::Zero(m);
    sol = kkt.solve(rhs);
    it.z = sol.tail(m);
  } else {
    Vec rhs(n + m);
    rhs << -st.c, st.b;
    Vec sol = kkt.solve(rhs);
    it.x = sol.head(n);
    it.z = sol.tail(m);
    it.s = -it.z;
  }
  shift_into_cone(K, it.s);
  {
    Vec zz = it.z;
    for (int i = 0; i < K.m0; ++i) zz[i] = 0.0;
    if (K.degree() > 0) {
      double a = cone_margin(K, zz);
      if (a < 1e-8) add_identity(K, it.z, 1.0 - a);
    }
  }
  for (int i = 0; i < K.m0; ++i) it.s[i] = 0.0;

  Iterate best = it;
  Metrics best_m;
  Scaling sc;
  int iter = 0;
  for (;; ++iter) {
    Metrics mt = measure(st, it);
    if (!std::isfinite(mt.merit())) break;
    if (mt.merit() < best_m.merit()) {
      best = it;
      best_m = mt;
    }
    if (mt.res_p <= tol && mt.res_d <= tol && (mt.gap_abs <= tol || mt.gap_rel <= tol))
      return finish(problem, st, it, mt, SolveStatus::kOptimal, iter);

    // Infeasibility certificates, checked once tau has collapsed relative to kappa.
    if (it.tau < it.kappa) {
      double bz = st.b.dot(it.z);
      double zn = std::max(1.0, it.z.lpNorm<Eigen::Infinity>());
      if (bz < -tol_inf * zn) {
        Vec atz = st.A.transpose() * it.z;
        if (atz.lpNorm<Eigen::Infinity>() <= tol_inf * -bz)
          return finish(problem, st, it, mt, SolveStatus::kInfeasible, iter);
      }
      double cx = st.c.dot(it.x);
      double xn = std::max(1.0, it.x.lpNorm<Eigen::Infinity>());
      if (cx < -tol_inf * xn) {
        Vec px = st.P * it.x;
        Vec axs = st.A * it.x + it.s;
        if (px.lpNorm<Eigen::Infinity>() <= tol_inf * -cx && (m == 0 || axs.lpNorm<Eigen::Infinity>() <= tol_inf * -cx))
          return finish(problem, st, it, mt, SolveStatus::kUnbounded, iter);
      }
    }
    if (iter >= opts.max_iter) break;

    // Residuals of the homogeneous embedding.
    Vec px = st.P * it.x;
    double xpx = it.x.dot(px);
    Vec rx = px + st.A.transpose() * it.z + st.c * it.tau;
    Vec rz = st.A * it.x + it.s - st.b * it.tau;
    double rtau = it.kappa + st.c.dot(it.x) + st.b.dot(it.z) + xpx / it.tau;

    update_scaling(K, it.s, it.z, sc);
    Vec lam = apply_w(K, sc, it.z, false);
    kkt.factor(&sc);

    Vec rhs2(n + m);
    rhs2 << -st.c, st.b;
    Vec sol2 = kkt.solve(rhs2);
    Vec x2 = sol2.head(n), z2 = sol2.tail(m);
    Vec px2 = st.P * x2;
    double denom = -it.kappa / it.tau + st.c.dot(x2) + st.b.dot(z2) + 2.0 * it.x.dot(px2) / it.tau - xpx / (it.tau * it.tau);

    struct Dir {
      Vec dx, dz, ds;
      double dtau = 0.0, dkappa = 0.0;
    };
    auto direction = [&](const Vec& dx_, const Vec& dz_, double dtau_, const Vec& ds_, double dkappa_) {
      Vec ds_hat = jordan_div(K, lam, ds_);
      Vec wds = apply_w(K, sc, ds_hat, false);
      Vec rhs(n + m);
      rhs << -dx_, -dz_ + wds;
      Vec sol1 = kkt.solve(rhs);
      Vec x1 = sol1.head(n), z1 = sol1.tail(m);
      double num = -dtau_ + dkappa_ / it.tau - st.c.dot(x1) - st.b.dot(z1) - 2.0 * it.x.dot(st.P * x1) / it.tau;
      Dir d;
      d.dtau = num / denom;
      d.dx = x1 + d.dtau * x2;
      d.dz = z1 + d.dtau * z2;
      Vec wdz = apply_w(K, sc, d.dz, false);
      d.ds = -apply_w(K, sc, ds_hat + wdz, false);
      for (int i = 0; i < K.m0; ++i) d.ds[i] = 0.0;
      d.dkappa = -(dkappa_ + it.kappa * d.dtau) / it.tau;
      return d;
    };
    auto max_step = [&](const Dir& d) {
      double a = std::min(cone_max_step(K, it.s, d.ds), cone_max_step(K, it.z, d.dz));
      if (d.dtau < 0.0) a = std::min(a, -it.tau / d.dtau);
      if (d.dkappa < 0.0) a = std::min(a, -it.kappa / d.dkappa);
      return a;
    };

    double mu = (it.s.tail(m - K.m0).dot(it.z.tail(m - K.m0)) + it.tau * it.kappa) / (nu + 1.0);
    Vec lam2 = jordan(K, lam, lam);
    Dir aff = direction(rx, rz, rtau, lam2, it.tau * it.kappa);
    double a_aff = std::min(1.0, max_step(aff));
    double sigma = std::pow(1.0 - a_aff, 3);

    Vec e = Vec::Zero(m);
    add_identity(K, e, 1.0);
    Vec cross = jordan(K, apply_w(K, sc, aff.ds, true), apply_w(K, sc, aff.dz, false));
    Vec ds = lam2 + cross - sigma * mu * e;
    double dk = it.tau * it.kappa + aff.dtau * aff.dkappa - sigma * mu;
    Dir d = direction((1.0 - sigma) * rx, (1.0 - sigma) * rz, (1.0 - sigma) * rtau, ds, dk);
    double a = std::min(1.0, 0.99 * max_step(d));
    if (!(a > 1e-12)) break;

    it.x += a * d.dx;
    it.z += a * d.dz;
    it.s += a * d.ds;
    it.tau += a * d.dtau;
    it.kappa += a * d.dkappa;
  }
  return finish(problem, st, best, best_m, SolveStatus::kMaxIter, iter);
}

const ConicSolver& default_solver() {
  static const InteriorPointSolver solver;
  return solver;
}

Solution solve(const ConicProblem& problem, const SolveOptions& opts) {
  return default_solver().solve(problem, opts);
}

}  // namespace gs
