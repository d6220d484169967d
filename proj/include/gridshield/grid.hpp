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

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gridshield/error.hpp"

namespace gs {

struct Bus {
  int id = 0;
  std::string name;
  std::optional<std::pair<double, double>> coords;  // (longitude, latitude)
  std::optional<int> zone;

  bool operator==(const Bus&) const = default;
};

// Series admittance g + i b and total line charging b_sh, all per unit.
struct Branch {
  int id = 0;
  int from_bus = 0;
  int to_bus = 0;
  double g = 0.0;
  double b = 0.0;
  double b_sh = 0.0;

  bool operator==(const Branch&) const = default;
};

struct Incidence {
  int branch = 0;
  bool outgoing = true;  // true when the bus is the branch's from_bus

  bool operator==(const Incidence&) const = default;
};

struct Grid {
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<std::vector<Incidence>> adjacency;
  int ref_bus = 0;
  double base_mva = 100.0;

  int n_bus() const { return static_cast<int>(buses.size()); }
  int n_branch() const { return static_cast<int>(branches.size()); }
  // Branch id joining a and b in either orientation, or -1.
  int find_branch(int a, int b) const;
  int other_end(int branch, int bus) const;
  std::vector<int> neighbors(int bus) const;
  int component_count() const;
  bool has_coords() const;

  bool operator==(const Grid&) const = default;
};

struct GroundTruthState {
  std::vector<double> vm;
  std::vector<double> va;  // radians

  bool operator==(const GroundTruthState&) const = default;
};

enum class CaseFormat { kMatpowerSubset, kJsonGrid };

struct ParsedCase {
  Grid grid;
  GroundTruthState state;
};

// Builds a Grid from raw branches: validates endpoints, merges parallel
// branches and fills the adjacency lists. Branch ids are reassigned densely.
Grid make_grid(std::vector<Bus> buses, const std::vector<Branch>& raw, int ref_bus = 0);

ParsedCase parse_case(std::string_view text, CaseFormat format);
ParsedCase load_case(const std::string& path);
std::string to_json_grid(const Grid& grid, const GroundTruthState& state);

int node_degree(const Grid& grid, int bus);

// Flat state (vm = 1, va = 0) of matching size.
GroundTruthState flat_state(const Grid& grid);

}  // namespace gs
