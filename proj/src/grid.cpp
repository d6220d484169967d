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

#include "gridshield/grid.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>
#include <json.hpp>

namespace gs {

namespace {

using json = nlohmann::json;

struct Row {
  int line = 0;
  std::vector<double> v;
};

struct Block {
  bool found = false;
  std::vector<Row> rows;
};

[[noreturn]] void syntax_error(int line, const std::string& msg) {
  throw Error(ErrorCode::kParse, fmt::format("line {}: {}", line, msg));
}

std::string_view strip_comment(std::string_view s) {
  auto p = s.find('%');
  return p == std::string_view::npos ? s : s.substr(0, p);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

double parse_number(std::string_view tok, int line) {
  double v = 0.0;
  std::string t(tok);
  if (t == "Inf" || t == "inf") return HUGE_VAL;
  if (t == "-Inf" || t == "-inf") return -HUGE_VAL;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    syntax_error(line, fmt::format("invalid numeric token '{}'", t));
  }
  return v;
}

struct MatpowerText {
  std::optional<double> base_mva;
  Block bus;
  Block branch;
};

MatpowerText scan_matpower(std::string_view text) {
  MatpowerText out;
  std::vector<std::string_view> lines;
  size_t start = 0;
  while (start <= text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }

  Block* open = nullptr;
  int open_line = 0;
  Row pending;
  auto flush = [&](int line) {
    if (!pending.v.empty()) {
      pending.line = pending.line ? pending.line : line;
      open->rows.push_back(std::move(pending));
    }
    pending = Row{};
  };

  for (size_t li = 0; li < lines.size(); ++li) {
    const int lineno = static_cast<int>(li) + 1;
    std::string_view s = trim(strip_comment(lines[li]));
    if (s.empty()) continue;

    if (!open) {
      auto eq = s.find('=');
      if (eq == std::string_view::npos) continue;
      std::string_view lhs = trim(s.substr(0, eq));
      std::string_view rhs = trim(s.substr(eq + 1));
      if (lhs == "mpc.baseMVA") {
        if (!rhs.empty() && rhs.back() == ';') rhs.remove_suffix(1);
        out.base_mva = parse_number(trim(rhs), lineno);
      } else if (lhs == "mpc.bus" || lhs == "mpc.branch") {
        Block& blk = lhs == "mpc.bus" ? out.bus : out.branch;
        if (blk.found) syntax_error(lineno, fmt::format("duplicate block {}", lhs));
        if (rhs.empty() || rhs.front() != '[') syntax_error(lineno, "expected '['");
        blk.found = true;
        open = &blk;
        open_line = lineno;
        s = rhs.substr(1);
      } else {
        continue;
      }
      if (!open) continue;
    }

    // Inside a matrix block: tokens, ';' row separators, ']' terminator.
    size_t i = 0;
    while (i < s.size()) {
      char c = s[i];
      if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
        ++i;
      } else if (c == ';') {
        flush(lineno);
        ++i;
      } else if (c == ']') {
        flush(lineno);
        open = nullptr;
        break;
      } else {
        size_t j = i;
        while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j])) && s[j] != ';' &&
               s[j] != ']' && s[j] != ',') {
          ++j;
        }
        if (pending.v.empty()) pending.line = lineno;
        pending.v.push_back(parse_number(s.substr(i, j - i), lineno));
        i = j;
      }
    }
    if (open) flush(lineno);  // newline also ends a row
  }
  if (open) syntax_error(open_line, "unterminated matrix block");
  return out;
}

void finalize_adjacency(Grid& g) {
  g.adjacency.assign(g.buses.size(), {});
  for (const auto& br : g.branches) {
    g.adjacency[br.from_bus].push_back({br.id, true});
    g.adjacency[br.to_bus].push_back({br.id, false});
  }
}

}  // namespace

int Grid::find_branch(int a, int b) const {
  if (a < 0 || a >= n_bus()) return -1;
  for (const auto& inc : adjacency[a]) {
    if (other_end(inc.branch, a) == b) return inc.branch;
  }
  return -1;
}

int Grid::other_end(int branch, int bus) const {
  const Branch& br = branches[branch];
  return br.from_bus == bus ? br.to_bus : br.from_bus;
}

std::vector<int> Grid::neighbors(int bus) const {
  std::vector<int> out;
  out.reserve(adjacency[bus].size());
  for (const auto& inc : adjacency[bus]) out.push_back(other_end(inc.branch, bus));
  return out;
}

int Grid::component_count() const {
  std::vector<int> seen(buses.size(), 0);
  int comps = 0;
  std::vector<int> stack;
  for (int s = 0; s < n_bus(); ++s) {
    if (seen[s]) continue;
    ++comps;
    seen[s] = 1;
    stack.push_back(s);
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (int v : neighbors(u)) {
        if (!seen[v]) {
          seen[v] = 1;
          stack.push_back(v);
        }
      }
    }
  }
  return comps;
}

bool Grid::has_coords() const {
  return !buses.empty() &&
         std::all_of(buses.begin(), buses.end(), [](const Bus& b) { return b.coords.has_value(); });
}

Grid make_grid(std::vector<Bus> buses, const std::vector<Branch>& raw, int ref_bus) {
  Grid g;
  const int nb = static_cast<int>(buses.size());
  for (int i = 0; i < nb; ++i) {
    if (buses[i].id != i) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("bus ids must be dense, got {} at {}", buses[i].id, i));
    }
  }
  size_t with_coords = std::count_if(buses.begin(), buses.end(), [](const Bus& b) { return b.coords.has_value(); });
  if (with_coords != 0 && with_coords != buses.size()) {
    throw Error(ErrorCode::kInvalidArgument, "coordinates must be present for all buses or none");
  }
  if (nb > 0 && (ref_bus < 0 || ref_bus >= nb)) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("reference bus {} out of range", ref_bus));
  }
  g.buses = std::move(buses);
  g.ref_bus = ref_bus;

  std::map<std::pair<int, int>, int> pair_to_id;
  for (const auto& r : raw) {
    if (r.from_bus < 0 || r.from_bus >= nb || r.to_bus < 0 || r.to_bus >= nb) {
      throw Error(ErrorCode::kDanglingBus, fmt::format("branch {}-{} references a missing bus", r.from_bus, r.to_bus));
    }
    if (r.from_bus == r.to_bus) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("self-loop at bus {}", r.from_bus));
    }
    auto key = std::minmax(r.from_bus, r.to_bus);
    auto it = pair_to_id.find(key);
    if (it == pair_to_id.end()) {
      Branch br = r;
      br.id = static_cast<int>(g.branches.size());
      pair_to_id.emplace(key, br.id);
      g.branches.push_back(br);
    } else {
      Branch& br = g.branches[it->second];
      br.g += r.g;
      br.b += r.b;
      br.b_sh += r.b_sh;
    }
  }
  for (const auto& br : g.branches) {
    if (br.g * br.g + br.b * br.b <= 0.0) {
      throw Error(ErrorCode::kZeroImpedance, fmt::format("branch {} has zero series admittance", br.id));
    }
  }
  finalize_adjacency(g);
  return g;
}

namespace {

ParsedCase parse_matpower(std::string_view text) {
  MatpowerText mt = scan_matpower(text);
  if (!mt.bus.found) syntax_error(1, "missing mpc.bus block");
  if (!mt.branch.found) syntax_error(1, "missing mpc.branch block");

  ParsedCase pc;
  std::unordered_map<long long, int> index;
  std::vector<Bus> buses;
  std::vector<double> vm, va_deg;
  int ref = -1;
  for (const auto& row : mt.bus.rows) {
    if (row.v.size() < 9) syntax_error(row.line, "bus row needs at least 9 columns");
    long long num = std::llround(row.v[0]);
    if (index.count(num)) syntax_error(row.line, fmt::format("duplicate bus number {}", num));
    int id = static_cast<int>(buses.size());
    index[num] = id;
    Bus b;
    b.id = id;
    b.name = fmt::format("bus {}", num);
    if (row.v.size() > 10) b.zone = static_cast<int>(std::llround(row.v[10]));
    buses.push_back(std::move(b));
    if (ref < 0 && std::llround(row.v[1]) == 3) ref = id;
    if (!(row.v[7] > 0.0)) syntax_error(row.line, "voltage magnitude must be positive");
    vm.push_back(row.v[7]);
    va_deg.push_back(row.v[8]);
  }
  if (buses.empty()) syntax_error(1, "empty bus block");
  if (ref < 0) ref = 0;

  std::vector<Branch> raw;
  for (const auto& row : mt.branch.rows) {
    if (row.v.size() < 5) syntax_error(row.line, "branch row needs at least 5 columns");
    if (row.v.size() > 10 && row.v[10] == 0.0) continue;  // out of service
    long long f = std::llround(row.v[0]);
    long long t = std::llround(row.v[1]);
    auto fi = index.find(f);
    auto ti = index.find(t);
    if (fi == index.end() || ti == index.end()) {
      throw Error(ErrorCode::kDanglingBus,
                  fmt::format("line {}: branch references missing bus {}", row.line, fi == index.end() ? f : t));
    }
    double r = row.v[2], x = row.v[3];
    double den = r * r + x * x;
    if (den == 0.0) {
      throw Error(ErrorCode::kZeroImpedance, fmt::format("line {}: zero-impedance branch {}-{}", row.line, f, t));
    }
    if (fi->second == ti->second) syntax_error(row.line, "branch connects a bus to itself");
    Branch br;
    br.from_bus = fi->second;
    br.to_bus = ti->second;
    br.g = r / den;
    br.b = -x / den;
    br.b_sh = row.v[4];
    raw.push_back(br);
  }

  pc.grid = make_grid(std::move(buses), raw, ref);
  if (mt.base_mva) pc.grid.base_mva = *mt.base_mva;
  const double deg = std::numbers::pi / 180.0;
  pc.state.vm = vm;
  pc.state.va.resize(va_deg.size());
  for (size_t i = 0; i < va_deg.size(); ++i) pc.state.va[i] = (va_deg[i] - va_deg[ref]) * deg;
  return pc;
}

ParsedCase parse_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParse, fmt::format("json_grid: {}", e.what()));
  }
  try {
    ParsedCase pc;
    std::vector<Bus> buses;
    for (const auto& jb : j.at("buses")) {
      Bus b;
      b.id = jb.at("id").get<int>();
      b.name = jb.value("name", fmt::format("bus {}", b.id));
      if (jb.contains("coords")) {
        const auto& c = jb.at("coords");
        b.coords = std::make_pair(c.at(0).get<double>(), c.at(1).get<double>());
      }
      if (jb.contains("zone")) b.zone = jb.at("zone").get<int>();
      pc.state.vm.push_back(jb.at("vm").get<double>());
      pc.state.va.push_back(jb.at("va").get<double>());
      buses.push_back(std::move(b));
    }
    std::vector<Branch> raw;
    for (const auto& jl : j.at("branches")) {
      Branch br;
      br.from_bus = jl.at("from").get<int>();
      br.to_bus = jl.at("to").get<int>();
      br.g = jl.at("g").get<double>();
      br.b = jl.at("b").get<double>();
      br.b_sh = jl.value("b_sh", 0.0);
      raw.push_back(br);
    }
    pc.grid = make_grid(std::move(buses), raw, j.value("ref_bus", 0));
    pc.grid.base_mva = j.value("base_mva", 100.0);
    for (double v : pc.state.vm) {
      if (!(v > 0.0)) throw Error(ErrorCode::kParse, "json_grid: vm must be positive");
    }
    return pc;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, fmt::format("json_grid: {}", e.what()));
  }
}

}  // namespace

ParsedCase parse_case(std::string_view text, CaseFormat format) {
  return format == CaseFormat::kMatpowerSubset ? parse_matpower(text) : parse_json(text);
}

ParsedCase load_case(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open case file {}", path));
  std::stringstream ss;
  ss << in.rdbuf();
  bool is_json = path.size() >= 5 && path.substr(path.size() - 5) == ".json";
  return parse_case(ss.str(), is_json ? CaseFormat::kJsonGrid : CaseFormat::kMatpowerSubset);
}

std::string to_json_grid(const Grid& grid, const GroundTruthState& state) {
  json j;
  j["format"] = "gridshield-grid";
  j["version"] = 1;
  j["base_mva"] = grid.base_mva;
  j["ref_bus"] = grid.ref_bus;
  json buses = json::array();
  for (const auto& b : grid.buses) {
    json jb;
    jb["id"] = b.id;
    jb["name"] = b.name;
    jb["vm"] = state.vm.at(b.id);
    jb["va"] = state.va.at(b.id);
    if (b.coords) jb["coords"] = {b.coords->first, b.coords->second};
    if (b.zone) jb["zone"] = *b.zone;
    buses.push_back(std::move(jb));
  }
  json branches = json::array();
  for (const auto& br : grid.branches) {
    branches.push_back({{"id", br.id}, {"from", br.from_bus}, {"to", br.to_bus},
                        {"g", br.g}, {"b", br.b}, {"b_sh", br.b_sh}});
  }
  j["buses"] = std::move(buses);
  j["branches"] = std::move(branches);
  return j.dump(1);
}

int node_degree(const Grid& grid, int bus) {
  if (bus < 0 || bus >= grid.n_bus()) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("invalid bus id {}", bus));
  }
  return static_cast<int>(grid.adjacency[bus].size());
}

GroundTruthState flat_state(const Grid& grid) {
  GroundTruthState s;
  s.vm.assign(grid.n_bus(), 1.0);
  s.va.assign(grid.n_bus(), 0.0);
  return s;
}

}  // namespace gs
