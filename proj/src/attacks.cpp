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

#include "gridshield/attacks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "hash.hpp"

namespace gs {

namespace {

constexpr uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
constexpr uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;

}  // namespace

Philox::Block Philox::bijection(Block c, std::array<uint32_t, 2> k) {
  for (int round = 0; round < 10; ++round) {
    uint64_t p0 = static_cast<uint64_t>(kM0) * c[0];
    uint64_t p1 = static_cast<uint64_t>(kM1) * c[2];
    uint32_t hi0 = static_cast<uint32_t>(p0 >> 32), lo0 = static_cast<uint32_t>(p0);
    uint32_t hi1 = static_cast<uint32_t>(p1 >> 32), lo1 = static_cast<uint32_t>(p1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    k[0] += kW0;
    k[1] += kW1;
  }
  return c;
}

Philox::Philox(uint64_t seed, uint64_t stream)
    : key_{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)}, stream_(stream) {}

uint32_t Philox::next_u32() {
  if (used_ == 4) {
    buf_ = bijection({static_cast<uint32_t>(counter_), static_cast<uint32_t>(counter_ >> 32),
                      static_cast<uint32_t>(stream_), static_cast<uint32_t>(stream_ >> 32)},
                     key_);
    ++counter_;
    used_ = 0;
  }
  return buf_[used_++];
}

uint64_t Philox::next_u64() {
  uint64_t hi = next_u32();
  return (hi << 32) | next_u32();
}

double Philox::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Philox::normal() {
  double u1 = 1.0 - uniform();  // (0, 1]
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

uint64_t Philox::below(uint64_t n) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "empty range");
  // Rejection keeps the draw unbiased.
  uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  for (;;) {
    uint64_t r = next_u64();
    if (r < limit) return r % n;
  }
}

std::vector<int> zonal_rows(const SensingModel& model, const Grid& grid, const AttackSpec& attack) {
  std::vector<char> in_zone(grid.n_bus(), 0);
  for (int k : attack.zone) {
    if (k < 0 || k >= grid.n_bus()) throw Error(ErrorCode::kInvalidArgument, "zone bus out of range");
    in_zone[k] = 1;
  }
  std::set<int> secure(attack.secure_rows.begin(), attack.secure_rows.end());
  std::vector<int> out;
  for (int i = 0; i < model.n_m(); ++i) {
    const Measurement& m = model.rows[i];
    int site = m.site(grid);
    if (!in_zone[site]) continue;
    if (!attack.strict) {
      if (m.is_flow()) {
        const Branch& br = grid.branches[m.branch];
        if (!(in_zone[br.from_bus] && in_zone[br.to_bus])) continue;
      }
      if (secure.count(i)) continue;
      if (attack.default_secure && m.kind == MeasKind::kVmag2) continue;
    }
    out.push_back(i);
  }
  return out;
}

ScenarioBatch generate(const SensingModel& model, const Grid& grid, const GroundTruthState& state,
                       const NoiseModel& noise, const AttackSpec& attack) {
  if (noise.sigma_vmag < 0.0 || noise.sigma_other < 0.0) throw Error(ErrorCode::kInvalidArgument, "negative sigma");
  if (!(attack.mag_lo >= 0.0 && attack.mag_hi >= attack.mag_lo))
    throw Error(ErrorCode::kInvalidArgument, "bad attack magnitude range");
  const int nm = model.n_m();
  ScenarioBatch sb;
  sb.x_true = model.lift(grid, state);
  Eigen::VectorXd clean = evaluate_raw(model, grid, state);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(nm), b = Eigen::VectorXd::Zero(nm);

  Philox nrng(noise.seed, 1);
  for (int i = 0; i < nm; ++i) {
    double sigma = model.rows[i].kind == MeasKind::kVmag2 ? noise.sigma_vmag : noise.sigma_other;
    double z = nrng.normal();
    w[i] = sigma * z;
  }

  Philox arng(attack.seed, 2);
  auto draw = [&]() {
    double mag = arng.uniform(attack.mag_lo, attack.mag_hi);
    return (arng.next_u32() & 1u) ? mag : -mag;
  };
  std::vector<int> rows;
  if (attack.kind == AttackKind::kScattered) {
    std::vector<std::vector<int>> flow_rows(grid.n_branch());
    for (int i = 0; i < nm; ++i)
      if (model.rows[i].is_flow()) flow_rows[model.rows[i].branch].push_back(i);
    std::vector<int> candidates;
    for (int l = 0; l < grid.n_branch(); ++l)
      if (!flow_rows[l].empty()) candidates.push_back(l);
    if (attack.n_lines < 0 || attack.n_lines > static_cast<int>(candidates.size()))
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("scattered attack requests {} lines but only {} carry flow sensors", attack.n_lines,
                              candidates.size()));
    for (int k = 0; k < attack.n_lines; ++k) {
      int pick = k + static_cast<int>(arng.below(candidates.size() - k));
      std::swap(candidates[k], candidates[pick]);
      sb.attacked_lines.push_back(candidates[k]);
    }
    std::sort(sb.attacked_lines.begin(), sb.attacked_lines.end());
    for (int l : sb.attacked_lines)
      for (int i : flow_rows[l]) rows.push_back(i);
  } else if (attack.kind == AttackKind::kZonal) {
    rows = zonal_rows(model, grid, attack);
  }
  std::sort(rows.begin(), rows.end());
  for (int i : rows) b[i] = draw();
  sb.J_true = rows;

  Eigen::Map<const Eigen::VectorXd> scale(model.row_scale.data(), nm);
  sb.w_true = scale.cwiseProduct(w);
  sb.b_true = b;
  sb.y = scale.cwiseProduct(clean) + sb.w_true + sb.b_true;
  return sb;
}

std::vector<std::complex<double>> phasors(const std::vector<double>& vm, const std::vector<double>& va) {
  if (vm.size() != va.size()) throw Error(ErrorCode::kDimension, "vm/va length mismatch");
  std::vector<std::complex<double>> v(vm.size());
  for (size_t k = 0; k < vm.size(); ++k) v[k] = std::polar(vm[k], va[k]);
  return v;
}

double rmse(const std::vector<std::complex<double>>& a, const std::vector<std::complex<double>>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kDimension, "rmse length mismatch");
  if (a.empty()) return 0.0;
  double acc = 0.0;
  for (size_t k = 0; k < a.size(); ++k) acc += std::norm(a[k] - b[k]);
  return std::sqrt(acc / static_cast<double>(a.size()));
}

F1Score f1(const std::vector<int>& J_true, const std::vector<int>& J_hat) {
  std::set<int> t(J_true.begin(), J_true.end()), h(J_hat.begin(), J_hat.end());
  size_t both = 0;
  for (int i : h) both += t.count(i);
  F1Score s;
  if (h.empty()) s.precision = t.empty() ? 1.0 : 0.0;
  else s.precision = static_cast<double>(both) / static_cast<double>(h.size());
  s.recall = t.empty() ? 1.0 : static_cast<double>(both) / static_cast<double>(t.size());
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

namespace {

void put_doubles(std::string& out, const Eigen::VectorXd& v) {
  static_assert(std::endian::native == std::endian::little, "replay format assumes little-endian hosts");
  out.append(reinterpret_cast<const char*>(v.data()), sizeof(double) * static_cast<size_t>(v.size()));
}

Eigen::VectorXd get_doubles(const std::string& in, size_t& pos, int n) {
  Eigen::VectorXd v(n);
  size_t bytes = sizeof(double) * static_cast<size_t>(n);
  if (pos + bytes > in.size()) throw Error(ErrorCode::kParse, "replay payload truncated");
  std::memcpy(v.data(), in.data() + pos, bytes);
  pos += bytes;
  return v;
}

}  // namespace

void write_batch(const std::string& prefix, const ScenarioBatch& batch) {
  std::string payload;
  put_doubles(payload, batch.y);
  put_doubles(payload, batch.w_true);
  put_doubles(payload, batch.b_true);
  put_doubles(payload, batch.x_true);
  {
    std::ofstream out(prefix + ".bin", std::ios::binary);
    if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot write {}.bin", prefix));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  }
  nlohmann::ordered_json j;
  j["format"] = "gridshield-batch";
  j["version"] = 1;
  j["n_m"] = batch.y.size();
  j["n_x"] = batch.x_true.size();
  j["layout"] = {"y", "w_true", "b_true", "x_true"};
  j["J_true"] = batch.J_true;
  j["attacked_lines"] = batch.attacked_lines;
  j["sha256"] = detail::sha256_hex(payload);
  std::ofstream out(prefix + ".json");
  if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot write {}.json", prefix));
  out << j.dump(1) << "\n";
}

ScenarioBatch read_batch(const std::string& prefix) {
  std::ifstream jin(prefix + ".json");
  if (!jin) throw Error(ErrorCode::kIo, fmt::format("cannot open {}.json", prefix));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(jin);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kParse, fmt::format("{}.json: {}", prefix, e.what()));
  }
  if (j.value("format", "") != "gridshield-batch") throw Error(ErrorCode::kParse, "not a gridshield batch");
  std::ifstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw Error(ErrorCode::kIo, fmt::format("cannot open {}.bin", prefix));
  std::string payload((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  if (detail::sha256_hex(payload) != j.at("sha256").get<std::string>())
    throw Error(ErrorCode::kParse, "replay payload hash mismatch");
  int nm = j.at("n_m").get<int>(), nx = j.at("n_x").get<int>();
  ScenarioBatch b;
  size_t pos = 0;
  b.y = get_doubles(payload, pos, nm);
  b.w_true = get_doubles(payload, pos, nm);
  b.b_true = get_doubles(payload, pos, nm);
  b.x_true = get_doubles(payload, pos, nx);
  b.J_true = j.at("J_true").get<std::vector<int>>();
  b.attacked_lines = j.at("attacked_lines").get<std::vector<int>>();
  return b;
}

}  // namespace gs
