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
#include <random>

#include "gridshield/attacks.hpp"
#include "gridshield/nls.hpp"

using namespace gs;
using Vec = Eigen::VectorXd;

namespace {

ParsedCase load(const char* name) { return load_case(std::string(GS_DATA_DIR) + "/" + name); }

GroundTruthState random_state(const Grid& g, std::mt19937& rng) {
  std::uniform_real_distribution<double> vm(0.9, 1.1), va(-0.6, 0.6);
  GroundTruthState s;
  for (int k = 0; k < g.n_bus(); ++k) {
    s.vm.push_back(vm(rng));
    s.va.push_back(k == g.ref_bus ? 0.0 : va(rng));
  }
  return s;
}

}  // namespace

TEST_CASE("polar measurements agree with the linear basis") {
  std::mt19937 rng(2);
  for (const char* name : {"case14.m", "case118.m"}) {
    auto pc = load(name);
    for (const char* preset : {"full", "profile_II"}) {
      SensingModel m = build_sensing_model(pc.grid, make_profile(pc.grid, preset), RowNormMode::kEstimation);
      auto s = random_state(pc.grid, rng);
      Vec a = polar_measure(pc.grid, m, s.vm, s.va), b = evaluate(m, pc.grid, s);
      CHECK((a - b).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("analytic Jacobian matches central differences") {
  std::mt19937 rng(9);
  auto pc = load("case30.m");
  SensingModel m = build_sensing_model(pc.grid, make_profile(pc.grid, "full"), RowNormMode::kEstimation);
  const int nb = pc.grid.n_bus();
  const double h = 1e-6;
  for (int t = 0; t < 20; ++t) {
    auto s = random_state(pc.grid, rng);
    Eigen::MatrixXd J(polar_jacobian(pc.grid, m, s.vm, s.va));
    double worst = 0.0;
    for (int c = 0; c < 2 * nb; ++c) {
      auto sp = s, sm = s;
      auto& vp = c < nb ? sp.vm : sp.va;
      auto& vm = c < nb ? sm.vm : sm.va;
      vp[c % nb] += h;
      vm[c % nb] -= h;
      Vec fd = (polar_measure(pc.grid, m, sp.vm, sp.va) - polar_measure(pc.grid, m, sm.vm, sm.va)) / (2 * h);
      for (int r = 0; r < m.n_m(); ++r)
        worst = std::max(worst, std::abs(fd[r] - J(r, c)) / std::max(1.0, std::abs(J(r, c))));
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("starting at the truth takes a zero step") {
  auto pc = load("case14.m");
  SensingModel m = build_sensing_model(pc.grid, make_profile(pc.grid, "full"), RowNormMode::kEstimation);
  Vec y = evaluate(m, pc.grid, pc.state);
  NlsConfig c;
  c.init = NlsInit::kPerturbed;
  c.tau = 0.0;
  c.base = pc.state;
  NlsResult r = newton_se(pc.grid, m, y, c);
  CHECK(r.converged);
  CHECK(r.iterations <= 1);
  CHECK(r.cost < 1e-20);
  for (int k = 0; k < pc.grid.n_bus(); ++k) {
    CHECK(std::abs(r.vm[k] - pc.state.vm[k]) < 1e-12);
    CHECK(std::abs(r.va[k] - pc.state.va[k]) < 1e-12);
  }
}

TEST_CASE("exact data at the flat state converges immediately") {
  auto pc = load("case14.m");
  GroundTruthState flat = flat_state(pc.grid);
  SensingModel m = build_sensing_model(pc.grid, make_profile(pc.grid, "full"), RowNormMode::kEstimation);
  NlsResult r = newton_se(pc.grid, m, evaluate(m, pc.grid, flat), {});
  CHECK(r.converged);
  CHECK(r.iterations <= 2);
  CHECK(std::sqrt(2 * r.cost) < 1e-10);
}

TEST_CASE("noiseless flat start recovers standard cases") {
  for (const char* name : {"case14.m", "case30.m", "case118.m"}) {
    auto pc = load(name);
    SensingModel m = build_sensing_model(pc.grid, make_profile(pc.grid, "full"), RowNormMode::kEstimation);
    NlsResult r = newton_se(pc.grid, m, evaluate(m, pc.grid, pc.state), {});
    CHECK(r.converged);
    CHECK(rmse(phasors(pc.state.vm, pc.state.va), phasors(r.vm, r.va)) < 1e-8);
    CHECK(r.removed_rows.empty());
  }
}

TEST_CASE("gross errors are removed by the residual test") {
  auto pc = load("case118.m");
  SensingModel m = build_sensing_model(pc.grid, make_profile(pc.grid, "full"), RowNormMode::kEstimation);
  NoiseModel nm;
  nm.seed = 1;
  ScenarioBatch sb = generate(m, pc.grid, pc.state, nm, {});
  // One isolated gross error on a redundant voltage row.
  int row = -1;
  for (int i = 0; i < m.n_m() && row < 0; ++i)
    if (m.rows[i].kind == MeasKind::kVmag2 && node_degree(pc.grid, m.rows[i].bus) >= 3) row = i;
  sb.y[row] += 4.0;
  NlsResult r = newton_se(pc.grid, m, sb.y, {});
  CHECK(std::find(r.removed_rows.begin(), r.removed_rows.end(), row) != r.removed_rows.end());
}

TEST_CASE("perturbed starts are reproducible") {
  auto pc = load("case14.m");
  SensingModel m = build_sensing_model(pc.grid, make_profile(pc.grid, "full"), RowNormMode::kEstimation);
  Vec y = evaluate(m, pc.grid, pc.state);
  NlsConfig c;
  c.init = NlsInit::kPerturbed;
  c.tau = 0.1;
  c.seed = 4;
  NlsResult a = newton_se(pc.grid, m, y, c), b = newton_se(pc.grid, m, y, c);
  CHECK(a.vm == b.vm);
  CHECK(a.va == b.va);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("invalid inputs are rejected") {
  auto pc = load("case14.m");
  SensingModel m = build_sensing_model(pc.grid, make_profile(pc.grid, "full"), RowNormMode::kEstimation);
  CHECK_THROWS_AS(newton_se(pc.grid, m, Vec::Zero(3), {}), Error);
  NlsConfig c;
  c.max_newton_iter = 0;
  CHECK_THROWS_AS(newton_se(pc.grid, m, Vec::Zero(m.n_m()), c), Error);
}
