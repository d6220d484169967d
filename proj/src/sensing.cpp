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

#include "gridshield/sensing.hpp"

#include <cmath>
#include <map>
#include <set>
#include <tuple>

#include <fmt/format.h>

namespace gs {

namespace {

// Raw coefficients of one branch-flow row: entries on (mg_site, re, im).
struct FlowCoef {
  double mg, re, im;
};

FlowCoef flow_coef(const Branch& br, MeasKind kind, bool forward) {
  const double g = br.g, b = br.b, bs = br.b_sh / 2.0;
  const double s = forward ? 1.0 : -1.0;  // reverse flips the sign on im
  if (kind == MeasKind::kPflow) return {g, -g, -s * b};
  return {-(b + bs), b, -s * g};
}

auto meas_key(const Measurement& m) { return std::make_tuple(static_cast<int>(m.kind), m.bus, m.branch, m.forward); }

}  // namespace

int Measurement::site(const Grid& grid) const {
  if (is_flow()) {
    const Branch& br = grid.branches.at(branch);
    return forward ? br.from_bus : br.to_bus;
  }
  return bus;
}

std::string describe(const Measurement& m) {
  switch (m.kind) {
    case MeasKind::kVmag2: return fmt::format("vmag2[{}]", m.bus);
    case MeasKind::kPinj: return fmt::format("pinj[{}]", m.bus);
    case MeasKind::kQinj: return fmt::format("qinj[{}]", m.bus);
    case MeasKind::kPflow: return fmt::format("pflow[{}{}]", m.branch, m.forward ? "+" : "-");
    case MeasKind::kQflow: return fmt::format("qflow[{}{}]", m.branch, m.forward ? "+" : "-");
  }
  return "?";
}

void validate_profile(const Grid& grid, const MeasurementProfile& profile) {
  std::set<std::tuple<int, int, int, bool>> seen;
  for (const auto& m : profile.items) {
    if (m.is_flow()) {
      if (m.branch < 0 || m.branch >= grid.n_branch()) {
        throw Error(ErrorCode::kInvalidArgument, fmt::format("measurement {} references a missing branch", describe(m)));
      }
    } else if (m.bus < 0 || m.bus >= grid.n_bus()) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("measurement {} references a missing bus", describe(m)));
    }
    Measurement k = m;
    if (m.is_flow()) k.bus = -1; else { k.branch = -1; k.forward = true; }
    if (!seen.insert(meas_key(k)).second) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("duplicate measurement {}", describe(m)));
    }
  }
}

MeasurementProfile make_profile(const Grid& grid, const std::string& preset) {
  bool vmag = true, inj = true;
  bool pf = true, qf = true, pr = true, qr = true;
  if (preset == "full" || preset == "profile_IV") {
  } else if (preset == "profile_I") {
    pr = qr = false;
  } else if (preset == "profile_II") {
    vmag = false;
    qr = false;
  } else if (preset == "profile_III") {
    qr = false;
  } else if (preset == "profile_V") {
    inj = false;
    qr = false;
  } else {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown profile preset '{}'", preset));
  }
  MeasurementProfile p;
  for (int k = 0; k < grid.n_bus(); ++k) {
    if (vmag) p.items.push_back({MeasKind::kVmag2, k, -1, true});
  }
  for (int l = 0; l < grid.n_branch(); ++l) {
    if (pf) p.items.push_back({MeasKind::kPflow, -1, l, true});
    if (qf) p.items.push_back({MeasKind::kQflow, -1, l, true});
    if (pr) p.items.push_back({MeasKind::kPflow, -1, l, false});
    if (qr) p.items.push_back({MeasKind::kQflow, -1, l, false});
  }
  for (int k = 0; k < grid.n_bus(); ++k) {
    if (inj) {
      p.items.push_back({MeasKind::kPinj, k, -1, true});
      p.items.push_back({MeasKind::kQinj, k, -1, true});
    }
  }
  return p;
}

std::vector<int> SensingModel::basis_branches() const {
  std::vector<int> out;
  for (const auto& c : cols) {
    if (c.kind == VarKind::kRe) out.push_back(c.id);
  }
  return out;
}

Eigen::VectorXd SensingModel::lift(const Grid& grid, const GroundTruthState& state) const {
  if (static_cast<int>(state.vm.size()) != grid.n_bus() || static_cast<int>(state.va.size()) != grid.n_bus()) {
    throw Error(ErrorCode::kDimension, "state size does not match grid");
  }
  Eigen::VectorXd x(n_x());
  for (int c = 0; c < n_x(); ++c) {
    const auto& v = cols[c];
    if (v.kind == VarKind::kMg) {
      x[c] = state.vm[v.id] * state.vm[v.id];
    } else {
      const Branch& br = grid.branches[v.id];
      const double m = state.vm[br.from_bus] * state.vm[br.to_bus];
      const double d = state.va[br.from_bus] - state.va[br.to_bus];
      x[c] = v.kind == VarKind::kRe ? m * std::cos(d) : m * std::sin(d);
    }
  }
  return x;
}

SensingModel build_sensing_model(const Grid& grid, const MeasurementProfile& profile, RowNormMode mode) {
  validate_profile(grid, profile);
  SensingModel sm;
  sm.mode = mode;
  sm.rows = profile.items;

  std::vector<char> live(grid.n_branch(), 0);
  for (const auto& m : profile.items) {
    if (m.is_flow()) {
      live[m.branch] = 1;
    } else if (m.is_injection()) {
      for (const auto& inc : grid.adjacency[m.bus]) live[inc.branch] = 1;
    }
  }
  sm.mg_col.resize(grid.n_bus());
  for (int k = 0; k < grid.n_bus(); ++k) {
    sm.mg_col[k] = static_cast<int>(sm.cols.size());
    sm.cols.push_back({VarKind::kMg, k});
  }
  sm.re_col.assign(grid.n_branch(), -1);
  sm.im_col.assign(grid.n_branch(), -1);
  for (int l = 0; l < grid.n_branch(); ++l) {
    if (!live[l]) continue;
    sm.re_col[l] = static_cast<int>(sm.cols.size());
    sm.cols.push_back({VarKind::kRe, l});
    sm.im_col[l] = static_cast<int>(sm.cols.size());
    sm.cols.push_back({VarKind::kIm, l});
  }

  std::vector<Triplet> trip;
  sm.row_scale.resize(sm.rows.size());
  std::map<int, double> row;
  auto add_flow = [&](int branch, MeasKind kind, bool forward) {
    const Branch& br = grid.branches[branch];
    FlowCoef f = flow_coef(br, kind, forward);
    int site = forward ? br.from_bus : br.to_bus;
    row[sm.mg_col[site]] += f.mg;
    row[sm.re_col[branch]] += f.re;
    row[sm.im_col[branch]] += f.im;
  };
  for (int i = 0; i < sm.n_m(); ++i) {
    const Measurement& m = sm.rows[i];
    row.clear();
    switch (m.kind) {
      case MeasKind::kVmag2:
        row[sm.mg_col[m.bus]] = 1.0;
        break;
      case MeasKind::kPflow:
      case MeasKind::kQflow:
        add_flow(m.branch, m.kind, m.forward);
        break;
      case MeasKind::kPinj:
      case MeasKind::kQinj: {
        MeasKind fk = m.kind == MeasKind::kPinj ? MeasKind::kPflow : MeasKind::kQflow;
        for (const auto& inc : grid.adjacency[m.bus]) add_flow(inc.branch, fk, inc.outgoing);
        break;
      }
    }
    double sq = 0.0;
    for (const auto& [c, v] : row) sq += v * v;
    double target = 1.0;
    if (m.kind == MeasKind::kVmag2 && mode == RowNormMode::kEstimation) {
      target = static_cast<double>(grid.adjacency[m.bus].size());
    }
    double scale = (sq > 0.0 && target > 0.0) ? std::sqrt(target / sq) : 1.0;
    sm.row_scale[i] = scale;
    for (const auto& [c, v] : row) {
      if (v != 0.0) trip.emplace_back(i, c, v * scale);
    }
  }
  sm.A.resize(sm.n_m(), sm.n_x());
  sm.A.setFromTriplets(trip.begin(), trip.end());
  sm.A.makeCompressed();
  return sm;
}

Eigen::VectorXd evaluate(const SensingModel& model, const Grid& grid, const GroundTruthState& state) {
  return model.A * model.lift(grid, state);
}

Eigen::VectorXd evaluate_raw(const SensingModel& model, const Grid& grid, const GroundTruthState& state) {
  Eigen::VectorXd y = evaluate(model, grid, state);
  for (int i = 0; i < model.n_m(); ++i) y[i] /= model.row_scale[i];
  return y;
}

Eigen::VectorXd lift_state(const GroundTruthState& state, const Grid& grid) {
  if (static_cast<int>(state.vm.size()) != grid.n_bus() || static_cast<int>(state.va.size()) != grid.n_bus()) {
    throw Error(ErrorCode::kDimension, "state size does not match grid");
  }
  const int nb = grid.n_bus();
  Eigen::VectorXd x(nb + 2 * grid.n_branch());
  for (int k = 0; k < nb; ++k) x[k] = state.vm[k] * state.vm[k];
  for (int l = 0; l < grid.n_branch(); ++l) {
    const Branch& br = grid.branches[l];
    const double m = state.vm[br.from_bus] * state.vm[br.to_bus];
    const double d = state.va[br.from_bus] - state.va[br.to_bus];
    x[nb + 2 * l] = m * std::cos(d);
    x[nb + 2 * l + 1] = m * std::sin(d);
  }
  return x;
}

std::vector<BranchCone> branch_cones(const SensingModel& model, const Grid& grid) {
  std::vector<BranchCone> out;
  for (int l : model.basis_branches()) {
    const Branch& br = grid.branches[l];
    out.push_back({l, model.mg_col[br.from_bus], model.mg_col[br.to_bus], model.re_col[l], model.im_col[l]});
  }
  return out;
}

std::vector<std::pair<int, double>> t_times_x(const BranchCone& cone, const Eigen::VectorXd& x) {
  return {{cone.mg_i, 0.5 * x[cone.mg_j]},
          {cone.mg_j, 0.5 * x[cone.mg_i]},
          {cone.re, -x[cone.re]},
          {cone.im, -x[cone.im]}};
}

Eigen::MatrixXd dense_block(const SpMat& A, const std::vector<int>& rows, const std::vector<int>& cols) {
  std::vector<int> rpos(A.rows(), -1);
  for (size_t i = 0; i < rows.size(); ++i) rpos[rows[i]] = static_cast<int>(i);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (size_t j = 0; j < cols.size(); ++j) {
    for (SpMat::InnerIterator it(A, cols[j]); it; ++it) {
      int r = rpos[it.row()];
      if (r >= 0) out(r, static_cast<Eigen::Index>(j)) = it.value();
    }
  }
  return out;
}

}  // namespace gs
