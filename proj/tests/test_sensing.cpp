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

#include <cmath>
#include <complex>
#include <random>

#include "gridshield/sensing.hpp"

using namespace gs;
using cd = std::complex<double>;

namespace {

Grid line_grid(double g, double b, double bsh) {
  std::vector<Bus> buses(2);
  buses[1].id = 1;
  return make_grid(buses, {{0, 0, 1, g, b, bsh}});
}

Grid star(int spokes) {
  std::vector<Bus> buses(spokes + 1);
  std::vector<Branch> br;
  for (int k = 0; k <= spokes; ++k) buses[k].id = k;
  for (int k = 1; k <= spokes; ++k) br.push_back({0, 0, k, 1.0, -2.0, 0.0});
  return make_grid(buses, br);
}

Grid load(const char* name) { return load_case(std::string(GS_DATA_DIR) + "/" + name).grid; }

// Complex power leaving `at` on branch l, from the phasors directly.
cd flow_power(const Grid& g, const std::vector<cd>& v, int l, int at) {
  const Branch& br = g.branches[l];
  int o = g.other_end(l, at);
  cd y(br.g, br.b);
  cd i = y * (v[at] - v[o]) + cd(0.0, br.b_sh / 2.0) * v[at];
  return v[at] * std::conj(i);
}

double oracle(const Grid& g, const std::vector<cd>& v, const Measurement& m) {
  switch (m.kind) {
    case MeasKind::kVmag2: return std::norm(v[m.bus]);
    case MeasKind::kPflow:
    case MeasKind::kQflow: {
      const Branch& br = g.branches[m.branch];
      cd s = flow_power(g, v, m.branch, m.forward ? br.from_bus : br.to_bus);
      return m.kind == MeasKind::kPflow ? s.real() : s.imag();
    }
    default: {
      cd s = 0.0;
      for (const Incidence& inc : g.adjacency[m.bus]) s += flow_power(g, v, inc.branch, m.bus);
      return m.kind == MeasKind::kPinj ? s.real() : s.imag();
    }
  }
}

GroundTruthState random_state(const Grid& g, std::mt19937& rng) {
  std::uniform_real_distribution<double> vm(0.9, 1.1), va(-0.5, 0.5);
  GroundTruthState s;
  for (int k = 0; k < g.n_bus(); ++k) {
    s.vm.push_back(vm(rng));
    s.va.push_back(k == g.ref_bus ? 0.0 : va(rng));
  }
  return s;
}

Eigen::MatrixXd raw_rows(const SensingModel& m) {
  Eigen::MatrixXd A = Eigen::MatrixXd(m.A);
  for (int i = 0; i < m.n_m(); ++i) A.row(i) /= m.row_scale[i];
  return A;
}

}  // namespace

TEST_CASE("forward active flow row before normalization") {
  Grid g = line_grid(1.0, -2.0, 0.0);
  MeasurementProfile p{{{MeasKind::kPflow, -1, 0, true}}};
  SensingModel m = build_sensing_model(g, p, RowNormMode::kVi);
  Eigen::MatrixXd A = raw_rows(m);
  CHECK(A(0, m.mg_col[0]) == doctest::Approx(1.0));
  CHECK(A(0, m.mg_col[1]) == doctest::Approx(0.0));
  CHECK(A(0, m.re_col[0]) == doctest::Approx(-1.0));
  CHECK(A(0, m.im_col[0]) == doctest::Approx(2.0));
}

TEST_CASE("voltage row at a degree-3 bus carries sqrt(3)") {
  Grid g = star(3);
  MeasurementProfile p{{{MeasKind::kVmag2, 0, -1, true}}};
  SensingModel m = build_sensing_model(g, p, RowNormMode::kEstimation);
  CHECK(Eigen::MatrixXd(m.A)(0, m.mg_col[0]) == doctest::Approx(std::sqrt(3.0)));
  SensingModel v = build_sensing_model(g, p, RowNormMode::kVi);
  CHECK(Eigen::MatrixXd(v.A)(0, v.mg_col[0]) == doctest::Approx(1.0));
}

TEST_CASE("flat start lifts to unit magnitudes and no flow") {
  Grid g = line_grid(1.0, -2.0, 0.0);
  GroundTruthState s = flat_state(g);
  Eigen::VectorXd x = lift_state(s, g);
  CHECK(x[0] == 1.0);
  CHECK(x[1] == 1.0);
  CHECK(x[2] == doctest::Approx(1.0));
  CHECK(x[3] == doctest::Approx(0.0));
  MeasurementProfile p{{{MeasKind::kPflow, -1, 0, true}}};
  CHECK(evaluate_raw(build_sensing_model(g, p, RowNormMode::kVi), g, s)[0] == doctest::Approx(0.0));
}

TEST_CASE("voltage magnitude at a leaf") {
  Grid g = line_grid(1.0, -2.0, 0.0);
  GroundTruthState s{{1.0, 1.05}, {0.0, 0.0}};
  MeasurementProfile p{{{MeasKind::kVmag2, 1, -1, true}}};
  CHECK(evaluate_raw(build_sensing_model(g, p, RowNormMode::kEstimation), g, s)[0] == doctest::Approx(1.1025));
}

TEST_CASE("quarter-turn lift") {
  Grid g = line_grid(1.0, -2.0, 0.0);
  GroundTruthState s{{1.0, 1.0}, {0.0, M_PI / 2}};
  Eigen::VectorXd x = lift_state(s, g);
  CHECK(x[0] == doctest::Approx(1.0));
  CHECK(x[1] == doctest::Approx(1.0));
  CHECK(std::abs(x[2]) < 1e-15);
  CHECK(x[3] == doctest::Approx(-1.0));
}

TEST_CASE("lifted states meet the cone with equality") {
  std::mt19937 rng(11);
  Grid g = load("case30.m");
  for (int t = 0; t < 20; ++t) {
    auto s = random_state(g, rng);
    Eigen::VectorXd x = lift_state(s, g);
    const int nb = g.n_bus();
    for (const Branch& b : g.branches) {
      double re = x[nb + 2 * b.id], im = x[nb + 2 * b.id + 1];
      CHECK(std::abs(x[b.from_bus] * x[b.to_bus] - (re * re + im * im)) < 1e-12);
    }
  }
  GroundTruthState zero = flat_state(g);
  for (int k = 0; k < g.n_bus(); ++k) zero.vm[k] = 1.0 + 0.01 * k;
  Eigen::VectorXd x = lift_state(zero, g);
  for (int l = 0; l < g.n_branch(); ++l) CHECK(x[g.n_bus() + 2 * l + 1] == 0.0);
}

TEST_CASE("linear rows match the complex power oracle") {
  std::mt19937 rng(5);
  for (const char* name : {"case14.m", "case30.m", "case118.m"}) {
    Grid g = load(name);
    for (const char* preset : {"full", "profile_I", "profile_II", "profile_IV", "profile_V"}) {
      SensingModel m = build_sensing_model(g, make_profile(g, preset), RowNormMode::kEstimation);
      for (int t = 0; t < 5; ++t) {
        auto s = random_state(g, rng);
        std::vector<cd> v;
        for (int k = 0; k < g.n_bus(); ++k) v.push_back(std::polar(s.vm[k], s.va[k]));
        Eigen::VectorXd raw = evaluate_raw(m, g, s);
        Eigen::VectorXd nrm = evaluate(m, g, s);
        double worst = 0.0;
        for (int i = 0; i < m.n_m(); ++i) {
          worst = std::max(worst, std::abs(raw[i] - oracle(g, v, m.rows[i])));
          worst = std::max(worst, std::abs(nrm[i] - m.row_scale[i] * raw[i]));
        }
        CHECK(worst < 1e-9);
      }
    }
  }
}

TEST_CASE("row norms follow the selected convention") {
  for (const char* name : {"case14.m", "case118.m"}) {
    Grid g = load(name);
    for (auto mode : {RowNormMode::kEstimation, RowNormMode::kVi}) {
      SensingModel m = build_sensing_model(g, make_profile(g, "full"), mode);
      Eigen::MatrixXd A(m.A);
      for (int i = 0; i < m.n_m(); ++i) {
        double target = 1.0;
        if (mode == RowNormMode::kEstimation && m.rows[i].kind == MeasKind::kVmag2)
          target = node_degree(g, m.rows[i].bus);
        CHECK(std::abs(A.row(i).squaredNorm() - target) < 1e-10);
      }
    }
  }
}

TEST_CASE("injection rows are sums of incident flow rows") {
  Grid g = load("case30.m");
  SensingModel m = build_sensing_model(g, make_profile(g, "full"), RowNormMode::kVi);
  Eigen::MatrixXd A = raw_rows(m);
  auto find = [&](const Measurement& q) {
    for (int i = 0; i < m.n_m(); ++i)
      if (m.rows[i] == q) return i;
    return -1;
  };
  for (int i = 0; i < m.n_m(); ++i) {
    const Measurement& r = m.rows[i];
    if (!r.is_injection()) continue;
    MeasKind fk = r.kind == MeasKind::kPinj ? MeasKind::kPflow : MeasKind::kQflow;
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(m.n_x());
    for (const Incidence& inc : g.adjacency[r.bus]) {
      int j = find({fk, -1, inc.branch, inc.outgoing});
      REQUIRE(j >= 0);
      sum += A.row(j);
    }
    CHECK((sum - A.row(i)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("columns are ordered magnitudes first then re/im by branch") {
  Grid g = load("case14.m");
  SensingModel m = build_sensing_model(g, make_profile(g, "full"), RowNormMode::kVi);
  for (int k = 0; k < g.n_bus(); ++k) CHECK(m.mg_col[k] == k);
  int next = g.n_bus();
  for (int l : m.basis_branches()) {
    CHECK(m.re_col[l] == next);
    CHECK(m.im_col[l] == next + 1);
    next += 2;
  }
  CHECK(next == m.n_x());
}

TEST_CASE("branches without sensors get no columns") {
  Grid g = star(3);
  MeasurementProfile p{{{MeasKind::kPflow, -1, 0, true}, {MeasKind::kVmag2, 2, -1, true}}};
  SensingModel m = build_sensing_model(g, p, RowNormMode::kVi);
  CHECK(m.re_col[0] >= 0);
  CHECK(m.re_col[1] == -1);
  CHECK(m.re_col[2] == -1);
  CHECK(m.n_x() == g.n_bus() + 2);
}

TEST_CASE("profiles reject duplicates and dangling references") {
  Grid g = star(2);
  CHECK_THROWS_AS(validate_profile(g, {{{MeasKind::kVmag2, 0, -1, true}, {MeasKind::kVmag2, 0, -1, true}}}), Error);
  CHECK_THROWS_AS(validate_profile(g, {{{MeasKind::kPflow, -1, 7, true}}}), Error);
  CHECK_THROWS_AS(make_profile(g, "profile_IX"), Error);
}
