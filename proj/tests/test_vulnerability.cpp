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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gridshield/vulnerability.hpp"

using namespace gs;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

namespace {

ParsedCase load(const char* name) { return load_case(std::string(GS_DATA_DIR) + "/" + name); }

Grid path(int n) {
  std::vector<Bus> b(n);
  std::vector<Branch> br;
  for (int k = 0; k < n; ++k) b[k].id = k;
  for (int k = 1; k < n; ++k) br.push_back({0, k - 1, k, 1.0 + 0.1 * k, -4.0 - 0.3 * k, 0.02});
  return make_grid(b, br);
}

// Hub j = 1 with attacked neighbour 0 and outer spokes 2..n-1, each spoke
// continuing to one further bus.
Grid broom(int spokes) {
  std::vector<Bus> b(2 + 2 * spokes);
  for (size_t k = 0; k < b.size(); ++k) b[k].id = static_cast<int>(k);
  std::vector<Branch> br{{0, 0, 1, 1.2, -5.0, 0.01}};
  for (int s = 0; s < spokes; ++s) {
    br.push_back({0, 1, 2 + s, 0.8 + 0.2 * s, -3.0 - s, 0.0});
    br.push_back({0, 2 + s, 2 + spokes + s, 1.0, -4.0, 0.0});
  }
  return make_grid(b, br);
}

ViSystem random_system(std::mt19937& rng, int d, bool with_t) {
  std::normal_distribution<double> n01;
  const int k = 2 + static_cast<int>(rng() % 3);
  const int n_ok = k + static_cast<int>(rng() % 3);
  ViSystem s;
  s.A_ok = Mat(n_ok, k);
  s.A_x = Mat(d, k);
  for (int i = 0; i < n_ok; ++i)
    for (int j = 0; j < k; ++j) s.A_ok(i, j) = n01(rng);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < k; ++j) s.A_x(i, j) = 0.5 * n01(rng);
  s.T = Mat::Zero(k, with_t ? 2 : 0);
  for (int c = 0; c < s.T.cols(); ++c)
    for (int j = 0; j < k; ++j) s.T(j, c) = n01(rng);
  return s;
}

Vec lifted(const ParsedCase& pc) { return lift_state(pc.state, pc.grid); }

}  // namespace

TEST_CASE("partition of a leaf on a path") {
  Grid g = path(5);
  SensingModel m = build_sensing_model(g, make_profile(g, "full"), RowNormMode::kVi);
  RegionPartition p = build_partition(g, m, {0});
  CHECK(p.attacked == std::vector<int>{0});
  CHECK(p.inner == std::vector<int>{1});
  CHECK(p.outer == std::vector<int>{2});
  CHECK(p.safe == std::vector<int>{3, 4});
  CHECK(p.lines_at.empty());
  CHECK(p.lines_at_bi == std::vector<int>{0});
  CHECK(p.lines_bd == std::vector<int>{1});
  CHECK(p.enlargement_log.empty());
  CHECK(static_cast<int>(p.m_at.size() + p.m_bi.size() + p.m_bo.size() + p.m_sf.size()) == m.n_m());
  CHECK(static_cast<int>(p.x_at.size() + p.x_bd.size() + p.x_sf.size()) == m.n_x());
  for (int i : p.m_bi) CHECK(m.rows[i].kind != MeasKind::kVmag2);
  // Injections at the inner bus and flows on the crossing line are inner-boundary rows.
  for (int i : p.m_bi) {
    const Measurement& r = m.rows[i];
    CHECK((r.is_injection() ? r.bus == 1 : r.branch == 0));
  }
}

TEST_CASE("shared inner neighbour is absorbed") {
  Grid g = path(5);
  SensingModel m = build_sensing_model(g, make_profile(g, "full"), RowNormMode::kVi);
  RegionPartition p = build_partition(g, m, {0, 2});
  CHECK(p.attacked == std::vector<int>{0, 1, 2});
  CHECK(p.inner == std::vector<int>{3});
  CHECK(p.outer == std::vector<int>{4});
  CHECK(p.enlargement_log.size() == 1u);
}

TEST_CASE("line between inner buses is absorbed") {
  std::vector<Bus> b(5);
  for (int k = 0; k < 5; ++k) b[k].id = k;
  Grid g = make_grid(b, {{0, 0, 1, 1, -4, 0}, {0, 0, 2, 1, -4, 0}, {0, 1, 2, 1, -4, 0}, {0, 2, 3, 1, -4, 0},
                         {0, 3, 4, 1, -4, 0}});
  SensingModel m = build_sensing_model(g, make_profile(g, "full"), RowNormMode::kVi);
  RegionPartition p = build_partition(g, m, {0});
  CHECK(!p.enlargement_log.empty());
  CHECK(std::find(p.attacked.begin(), p.attacked.end(), 1) != p.attacked.end());
  for (int l = 0; l < g.n_branch(); ++l) {
    const Branch& br = g.branches[l];
    bool a = std::binary_search(p.inner.begin(), p.inner.end(), br.from_bus);
    bool c = std::binary_search(p.inner.begin(), p.inner.end(), br.to_bus);
    CHECK(!(a && c));
  }
}

TEST_CASE("attacking every bus is rejected") {
  Grid g = path(3);
  SensingModel m = build_sensing_model(g, make_profile(g, "full"), RowNormMode::kVi);
  CHECK_THROWS_AS(build_partition(g, m, {0, 1, 2}), Error);
  CHECK_THROWS_AS(build_partition(g, m, {}), Error);
}

TEST_CASE("local boundary at a degree-3 inner bus") {
  Grid g = broom(2);
  SensingModel m = build_sensing_model(g, make_profile(g, "full"), RowNormMode::kVi);
  LocalBoundary lb = local_boundary(g, m, 0, true);
  CHECK(lb.attacked_bus == 0);
  CHECK(lb.inner_bus == 1);
  CHECK(lb.rows_x.size() == 6u);
  int flows = 0, inj = 0;
  for (int i : lb.rows_x) {
    const Measurement& r = m.rows[i];
    if (r.is_flow()) {
      CHECK(r.branch == 0);
      ++flows;
    } else {
      CHECK(r.is_injection());
      CHECK(r.bus == 1);
      ++inj;
    }
  }
  CHECK(flows == 4);
  CHECK(inj == 2);
  CHECK(lb.cols.size() == 3u + 4u);
  CHECK(!lb.empty_flag);
  for (int i : lb.rows_ok) CHECK(m.rows[i].site(g) != 0);
}

TEST_CASE("reverse direction swaps the roles") {
  Grid g = path(4);
  SensingModel m = build_sensing_model(g, make_profile(g, "full"), RowNormMode::kVi);
  LocalBoundary f = local_boundary(g, m, 1, true), r = local_boundary(g, m, 1, false);
  CHECK(f.attacked_bus == r.inner_bus);
  CHECK(f.inner_bus == r.attacked_bus);
  CHECK(f.cols != r.cols);
}

TEST_CASE("boundary without dependent rows has zero index") {
  Grid g = path(3);
  MeasurementProfile p{{{MeasKind::kVmag2, 1, -1, true}, {MeasKind::kPflow, -1, 1, true}}};
  SensingModel m = build_sensing_model(g, p, RowNormMode::kVi);
  LocalBoundary lb = local_boundary(g, m, 0, true);
  CHECK(lb.rows_x.empty());
  CHECK(line_vi_lp(g, m, 0, true).alpha_lp == 0.0);
  MeasurementProfile far{{{MeasKind::kVmag2, 2, -1, true}}};
  SensingModel m2 = build_sensing_model(g, far, RowNormMode::kVi);
  CHECK(local_boundary(g, m2, 0, false).empty_flag);
  CHECK(!local_boundary(g, m2, 1, true).empty_flag);
}

TEST_CASE("a defective row mirroring a defending row gives index one") {
  ViSystem s;
  s.A_ok = Mat::Identity(2, 2);
  s.A_x = Mat(1, 2);
  s.A_x << -1.0, 0.0;
  s.T = Mat::Zero(2, 0);
  for (auto method : {ViMethod::kEnumeration, ViMethod::kLcp, ViMethod::kMip}) {
    ViOptions o;
    o.method = method;
    CHECK(vulnerability_index(s, o).alpha == doctest::Approx(1.0).epsilon(1e-7));
  }
}

TEST_CASE("undefendable direction is infinite") {
  ViSystem s;
  s.A_ok = Mat(1, 2);
  s.A_ok << 1.0, 0.0;
  s.A_x = Mat(1, 2);
  s.A_x << 0.0, 1.0;
  s.T = Mat::Zero(2, 0);
  for (auto method : {ViMethod::kEnumeration, ViMethod::kLcp, ViMethod::kMip}) {
    ViOptions o;
    o.method = method;
    CHECK(std::isinf(vulnerability_index(s, o).alpha));
  }
}

TEST_CASE("complementarity methods agree with enumeration") {
  std::mt19937 rng(31);
  for (int t = 0; t < 50; ++t) {
    const int d = 1 + static_cast<int>(rng() % 6);
    ViSystem s = random_system(rng, d, t % 2 == 1);
    ViOptions o;
    double e = vulnerability_index(s, o).alpha;
    for (auto method : {ViMethod::kLcp, ViMethod::kMip}) {
      o.method = method;
      double a = vulnerability_index(s, o).alpha;
      if (std::isinf(e))
        CHECK(std::isinf(a));
      else
        CHECK(std::abs(a - e) <= 1e-6 * std::max(1.0, e));
    }
  }
}

TEST_CASE("interior sign vectors never beat the vertices") {
  std::mt19937 rng(41);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    ViSystem s = random_system(rng, 1 + static_cast<int>(rng() % 4), t % 2 == 0);
    ViValue v = vulnerability_index(s, {});
    if (std::isinf(v.alpha)) continue;
    CHECK(inner_value(s, v.xi) == doctest::Approx(v.alpha).epsilon(1e-6));
    for (int k = 0; k < 10; ++k) {
      Vec xi(s.A_x.rows());
      for (int i = 0; i < xi.size(); ++i) xi[i] = u(rng);
      CHECK(inner_value(s, xi) <= v.alpha + 1e-6);
    }
  }
}

TEST_CASE("cone multipliers only lower the index") {
  auto pc = load("case14.m");
  SensingModel m = build_sensing_model(pc.grid, make_profile(pc.grid, "full"), RowNormMode::kVi);
  Vec x = lifted(pc);
  for (int l = 0; l < pc.grid.n_branch(); ++l)
    for (bool f : {true, false}) {
      LineVIResult r = line_vi_socp(pc.grid, m, l, f, x);
      REQUIRE(r.alpha_socp.has_value());
      CHECK(*r.alpha_socp <= r.alpha_lp + 1e-7);
      CHECK(r.alpha_lp >= 0.0);
    }
  // Without any cone term the two programs coincide.
  LocalBoundary lb = local_boundary(pc.grid, m, 0, true);
  ViSystem s = line_system(pc.grid, m, lb, &x);
  s.T.setZero();
  CHECK(vulnerability_index(s, {}).alpha ==
        doctest::Approx(vulnerability_index(line_system(pc.grid, m, lb, nullptr), {}).alpha));
}

TEST_CASE("incoherence examples") {
  Mat Q = Eigen::HouseholderQR<Mat>(Mat::Random(3, 3)).householderQ();
  CHECK(incoherence(Q, Mat::Zero(2, 3), MatrixNorm::kMaxColumnSum) == 0.0);
  Mat dup = Q.row(1);
  CHECK(incoherence(Q, dup, MatrixNorm::kMaxColumnSum) == doctest::Approx(1.0));
  CHECK(incoherence(Q, dup, MatrixNorm::kMaxRowSum) == doctest::Approx(1.0));
  Mat M(2, 2);
  M << 1, -2, 3, 4;
  CHECK(matrix_norm(M, MatrixNorm::kMaxColumnSum) == 6.0);
  CHECK(matrix_norm(M, MatrixNorm::kMaxRowSum) == 7.0);
  Mat bad(3, 2);
  bad << 1, 2, 2, 4, 3, 6;
  try {
    incoherence(bad, Mat::Ones(1, 2), MatrixNorm::kMaxRowSum);
    FAIL("expected rank error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kRankDeficient);
  }
}

TEST_CASE("row-sum incoherence bounds the index on every line") {
  for (const char* name : {"case14.m", "case30.m"}) {
    auto pc = load(name);
    SensingModel m = build_sensing_model(pc.grid, make_profile(pc.grid, "full"), RowNormMode::kVi);
    for (int l = 0; l < pc.grid.n_branch(); ++l)
      for (bool f : {true, false}) {
        auto rho = line_incoherence(pc.grid, m, l, f, MatrixNorm::kMaxRowSum);
        if (!rho) continue;
        CHECK(*rho >= line_vi_lp(pc.grid, m, l, f).alpha_lp - 1e-7);
      }
  }
}

TEST_CASE("lower eigenvalue examples") {
  Grid g = path(5);
  SensingModel m = build_sensing_model(g, make_profile(g, "full"), RowNormMode::kEstimation);
  RegionPartition p = build_partition(g, m, {0});
  LowerEigenvalue le = lower_eigenvalue(m, p);
  auto smin2 = [](const Mat& B) {
    if (B.cols() == 0) return kInf;
    Eigen::JacobiSVD<Mat> svd(B);
    double s = B.rows() >= B.cols() ? svd.singularValues().minCoeff() : 0.0;
    return s * s;
  };
  std::vector<int> m_bd = p.m_bi;
  m_bd.insert(m_bd.end(), p.m_bo.begin(), p.m_bo.end());
  Mat Abd = dense_block(m.A, m_bd, p.x_bd);
  Mat Q = Mat::Zero(Abd.rows(), Abd.cols() + static_cast<int>(p.m_bi.size()));
  Q.leftCols(Abd.cols()) = Abd;
  for (size_t i = 0; i < p.m_bi.size(); ++i) Q(static_cast<int>(i), Abd.cols() + static_cast<int>(i)) = 1.0;
  CHECK(std::abs(le.boundary_q - smin2(Q)) < 1e-9);
  CHECK(std::abs(le.outer - smin2(dense_block(m.A, p.m_bo, p.x_bd))) < 1e-9);
  CHECK(std::abs(le.safe - smin2(dense_block(m.A, p.m_sf, p.x_sf))) < 1e-9);
  CHECK(le.value == std::min({le.boundary_q, le.outer, le.safe}));

  // Hand-built orthonormal blocks.
  SensingModel h;
  h.A = Mat::Identity(4, 4).sparseView();
  RegionPartition q;
  q.m_bo = {0, 1};
  q.x_bd = {0, 1};
  q.m_sf = {2, 3};
  q.x_sf = {2, 3};
  CHECK(lower_eigenvalue(h, q).value == doctest::Approx(1.0));
  q.m_sf = {2};
  CHECK(lower_eigenvalue(h, q).value == 0.0);
}

TEST_CASE("classification of simple patterns") {
  Grid g = path(3);
  auto mk = [&](double a01, double a10, double a12, double a21) {
    std::vector<LineVIResult> f(2), b(2);
    f[0].alpha_lp = a01;
    b[0].alpha_lp = a10;
    f[1].alpha_lp = a12;
    b[1].alpha_lp = a21;
    return classify(g, f, b);
  };
  VulnerabilityReport z = mk(0, 0, 0, 0);
  CHECK(z.v_line_fraction == 0.0);
  CHECK(z.mean_critical_index == 0.0);
  VulnerabilityReport c = mk(2, 0, 2, 0);
  CHECK(c.critical_index == std::vector<int>{2, 1, 0});
  CHECK(c.v_line == std::vector<char>{1, 1});
  CHECK(c.c_bus == std::vector<char>{1, 1, 0});
  CHECK(c.c_line == std::vector<char>{1, 0});
  for (double f : {c.v_line_fraction, c.c_line_fraction, c.c_bus_fraction}) {
    CHECK(f >= 0.0);
    CHECK(f <= 1.0);
  }
  // Ties at exactly one are vulnerable.
  CHECK(mk(1.0, 0, 0, 0).v_line[0] == 1);
  CHECK(mk(0.999, 0, 0, 0).robust[0] == 1);
}

TEST_CASE("classification is invariant under bus relabeling") {
  auto pc = load("case14.m");
  const int nb = pc.grid.n_bus();
  std::vector<int> perm(nb);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937 rng(5);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Bus> buses(nb);
  for (int k = 0; k < nb; ++k) buses[perm[k]] = pc.grid.buses[k], buses[perm[k]].id = perm[k];
  std::vector<Branch> br;
  for (Branch b : pc.grid.branches) {
    b.from_bus = perm[b.from_bus];
    b.to_bus = perm[b.to_bus];
    br.push_back(b);
  }
  Grid h = make_grid(buses, br, perm[pc.grid.ref_bus]);
  SensingModel m1 = build_sensing_model(pc.grid, make_profile(pc.grid, "full"), RowNormMode::kVi);
  SensingModel m2 = build_sensing_model(h, make_profile(h, "full"), RowNormMode::kVi);
  VulnerabilityReport r1 = vulnerability_report(pc.grid, m1, {});
  ReportOptions o;
  o.threads = 2;
  VulnerabilityReport r2 = vulnerability_report(h, m2, o);
  for (int k = 0; k < nb; ++k) {
    CHECK(r1.critical_index[k] == r2.critical_index[perm[k]]);
    CHECK(r1.c_bus[k] == r2.c_bus[perm[k]]);
  }
  CHECK(r1.v_line_fraction == doctest::Approx(r2.v_line_fraction));
  CHECK(r1.c_line_fraction == doctest::Approx(r2.c_line_fraction));
}

TEST_CASE("path and cycle widths") {
  for (auto h : {EliminationHeuristic::kMinDegree, EliminationHeuristic::kMinFill}) {
    for (int n : {2, 5, 17}) {
      Grid g = path(n);
      TreeDecomposition td = tree_decompose(g, h);
      CHECK(td.width == 1);
      CHECK(validate_tree(td, g).ok());
    }
    for (int n : {3, 6, 20}) {
      std::vector<std::pair<int, int>> e;
      for (int k = 0; k < n; ++k) e.emplace_back(k, (k + 1) % n);
      TreeDecomposition td = tree_decompose(n, e, h);
      CHECK(td.width == 2);
      CHECK(validate_tree(td, n, e).ok());
    }
  }
}

TEST_CASE("decompositions of random graphs are valid") {
  std::mt19937 rng(1234);
  int failures = 0;
  for (int t = 0; t < 1000; ++t) {
    const int n = 1 + static_cast<int>(rng() % 25);
    const int m = static_cast<int>(rng() % (3 * n + 1));
    std::vector<std::pair<int, int>> e;
    for (int i = 0; i < m; ++i) e.emplace_back(static_cast<int>(rng() % n), static_cast<int>(rng() % n));
    auto h = t % 2 ? EliminationHeuristic::kMinFill : EliminationHeuristic::kMinDegree;
    if (!validate_tree(tree_decompose(n, e, h), n, e).ok()) ++failures;
  }
  CHECK(failures == 0);
}

TEST_CASE("validator rejects broken decompositions") {
  std::vector<std::pair<int, int>> e{{0, 1}, {1, 2}, {2, 3}};
  TreeDecomposition td;
  td.bags = {{0, 1}, {1, 2}, {2, 3}};
  td.edges = {{0, 1}, {1, 2}};
  CHECK(validate_tree(td, 4, e).ok());
  TreeDecomposition no_edge = td;
  no_edge.bags[1] = {1};
  CHECK(!validate_tree(no_edge, 4, e).edge_coverage);
  TreeDecomposition split = td;
  split.bags = {{0, 1}, {2, 3}, {1, 2}};
  split.edges = {{0, 1}, {1, 2}};
  CHECK(!validate_tree(split, 4, e).running_intersection);
  TreeDecomposition cyc = td;
  cyc.edges.emplace_back(0, 2);
  CHECK(!validate_tree(cyc, 4, e).is_tree);
  TreeDecomposition miss = td;
  miss.bags[2] = {2};
  CHECK(!validate_tree(miss, 4, e).node_coverage);
}

TEST_CASE("bag index equals the line index on coinciding partitions") {
  {
    Grid g = path(4);
    SensingModel m = build_sensing_model(g, make_profile(g, "full"), RowNormMode::kVi);
    TreeDecomposition td = tree_decompose(g, EliminationHeuristic::kMinDegree);
    BagAnalysis ba = bag_vi(g, m, td, {0}, false, nullptr);
    REQUIRE(ba.results.size() == 1u);
    CHECK(ba.results[0].adhesion == std::vector<int>{1});
    CHECK(std::abs(ba.results[0].alpha - line_vi_lp(g, m, 0, true).alpha_lp) < 1e-6);
  }
  {
    Grid g = broom(2);
    SensingModel m = build_sensing_model(g, make_profile(g, "full"), RowNormMode::kVi);
    TreeDecomposition td;
    td.bags = {{0, 1}, {1, 2, 3}, {2, 4}, {3, 5}};
    td.edges = {{0, 1}, {1, 2}, {1, 3}};
    REQUIRE(validate_tree(td, g).ok());
    BagAnalysis ba = bag_vi(g, m, td, {0}, false, nullptr);
    REQUIRE(ba.results.size() == 1u);
    CHECK(ba.results[0].link_bag == 1);
    CHECK(ba.results[0].outer_link == std::vector<int>{2, 3});
    CHECK(std::abs(ba.results[0].alpha - line_vi_lp(g, m, 0, true).alpha_lp) < 1e-6);
    // Bag properties: safe bags avoid infected nodes, outer-link nodes avoid infected bags.
    for (int s : ba.safe)
      for (int v : td.bags[s])
        for (int i : ba.infected) CHECK(std::count(td.bags[i].begin(), td.bags[i].end(), v) == 0);
    for (int v : ba.results[0].outer_link)
      for (int i : ba.infected) CHECK(std::count(td.bags[i].begin(), td.bags[i].end(), v) == 0);
  }
}

TEST_CASE("bag analysis reports unsupported layouts") {
  Grid g = path(5);
  SensingModel m = build_sensing_model(g, make_profile(g, "full"), RowNormMode::kVi);
  TreeDecomposition td = tree_decompose(g, EliminationHeuristic::kMinDegree);
  BagAnalysis ba = bag_vi(g, m, td, {0, 4}, false, nullptr);
  CHECK(!ba.infected_subtree);
  CHECK(ba.results.empty());
  CHECK(!ba.note.empty());
  MeasurementProfile p{{{MeasKind::kVmag2, 1, -1, true}, {MeasKind::kVmag2, 2, -1, true}}};
  SensingModel sparse = build_sensing_model(g, p, RowNormMode::kVi);
  BagAnalysis z = bag_vi(g, sparse, td, {0}, false, nullptr);
  REQUIRE(!z.results.empty());
  CHECK(z.results[0].m_ad.empty());
  CHECK(z.results[0].alpha == 0.0);
}

TEST_CASE("estimation-mode models are rejected") {
  Grid g = path(3);
  SensingModel m = build_sensing_model(g, make_profile(g, "full"), RowNormMode::kEstimation);
  CHECK_THROWS_AS(line_vi_lp(g, m, 0, true), Error);
}
