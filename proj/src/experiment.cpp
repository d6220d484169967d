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

#include "gridshield/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "gridshield/error.hpp"
#include "hash.hpp"
#include "pool.hpp"

namespace gs {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration.

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::kConfig, msg); }

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) config_error(fmt::format("{} must be an object", where));
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) config_error(fmt::format("unknown key '{}' in {}", k, where));
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    config_error(fmt::format("{}.{}: {}", where, key, e.what()));
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (j.contains(key)) out = get<T>(j, key, where);
}

std::vector<std::string> string_or_list(const json& v, const std::string& where) {
  if (v.is_string()) return {v.get<std::string>()};
  if (!v.is_array() || v.empty()) config_error(fmt::format("{} must be a string or a non-empty list", where));
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) config_error(fmt::format("{} entries must be strings", where));
    out.push_back(e.get<std::string>());
  }
  return out;
}

AttackKind parse_attack_kind(const std::string& s) {
  if (s == "none") return AttackKind::kNone;
  if (s == "scattered") return AttackKind::kScattered;
  if (s == "zonal") return AttackKind::kZonal;
  config_error(fmt::format("unknown attack kind '{}'", s));
}

MatrixNorm parse_norm(const std::string& s) {
  if (s == "row_sum") return MatrixNorm::kMaxRowSum;
  if (s == "column_sum") return MatrixNorm::kMaxColumnSum;
  config_error(fmt::format("unknown matrix norm '{}'", s));
}

EliminationHeuristic parse_heuristic(const std::string& s) {
  if (s == "min_degree") return EliminationHeuristic::kMinDegree;
  if (s == "min_fill") return EliminationHeuristic::kMinFill;
  config_error(fmt::format("unknown elimination heuristic '{}'", s));
}

bool is_estimator(const std::string& s) {
  if (s == "newton") return true;
  try {
    parse_step1_variant(s);
    return true;
  } catch (const Error&) {
    return false;
  }
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    config_error(fmt::format("config is not valid JSON: {}", e.what()));
  }
  check_keys(j, {"name", "case", "profile", "estimators", "step1", "step2", "noise", "attack", "newton", "vi", "bag",
                 "seed", "seeds", "repeat", "output_dir", "threads", "flag_threshold"},
             "config");
  ExperimentConfig c;
  read(j, "name", c.name, "config");
  if (!j.contains("case")) config_error("config.case is required");
  fs::path cp = get<std::string>(j, "case", "config");
  if (cp.is_relative() && !base_dir.empty()) cp = fs::path(base_dir) / cp;
  c.case_path = cp.lexically_normal().string();
  if (j.contains("profile")) c.profiles = string_or_list(j["profile"], "config.profile");
  static const std::set<std::string> kPresets{"full", "profile_I", "profile_II", "profile_III", "profile_IV", "profile_V"};
  for (const auto& p : c.profiles)
    if (!kPresets.count(p)) config_error(fmt::format("unknown profile preset '{}'", p));
  if (j.contains("estimators")) c.estimators = string_or_list(j["estimators"], "config.estimators");
  for (const auto& e : c.estimators)
    if (!is_estimator(e)) config_error(fmt::format("unknown estimator '{}'", e));

  if (j.contains("step1")) {
    const json& s = j["step1"];
    check_keys(s, {"lambda", "bdd_threshold", "solver_tol"}, "step1");
    read(s, "lambda", c.lambda, "step1");
    read(s, "bdd_threshold", c.bdd_threshold, "step1");
    read(s, "solver_tol", c.solver_tol, "step1");
    if (!(c.solver_tol > 0.0)) config_error("step1.solver_tol must be positive");
  }
  if (j.contains("step2")) {
    const json& s = j["step2"];
    check_keys(s, {"variant", "lambda2"}, "step2");
    if (s.contains("variant")) c.step2 = parse_step2_variant(get<std::string>(s, "variant", "step2"));
    read(s, "lambda2", c.lambda2, "step2");
  }
  if (j.contains("noise")) {
    const json& s = j["noise"];
    check_keys(s, {"enabled", "sigma_vmag", "sigma_other"}, "noise");
    read(s, "enabled", c.noise.enabled, "noise");
    read(s, "sigma_vmag", c.noise.sigma_vmag, "noise");
    read(s, "sigma_other", c.noise.sigma_other, "noise");
    if (c.noise.sigma_vmag < 0.0 || c.noise.sigma_other < 0.0) config_error("noise sigmas must be non-negative");
  }
  if (j.contains("attack")) {
    const json& s = j["attack"];
    check_keys(s, {"kind", "fraction", "n_lines", "zone", "strict", "default_secure", "magnitude"}, "attack");
    if (s.contains("kind")) c.attack.kind = parse_attack_kind(get<std::string>(s, "kind", "attack"));
    read(s, "fraction", c.attack.fraction, "attack");
    read(s, "n_lines", c.attack.n_lines, "attack");
    read(s, "zone", c.attack.zone, "attack");
    read(s, "strict", c.attack.strict, "attack");
    read(s, "default_secure", c.attack.default_secure, "attack");
    if (s.contains("magnitude")) {
      auto m = get<std::vector<double>>(s, "magnitude", "attack");
      if (m.size() != 2 || !(m[0] >= 0.0 && m[1] >= m[0])) config_error("attack.magnitude must be [lo, hi]");
      c.attack.mag_lo = m[0];
      c.attack.mag_hi = m[1];
    }
    if (!(c.attack.fraction >= 0.0 && c.attack.fraction <= 1.0)) config_error("attack.fraction must lie in [0, 1]");
    if (c.attack.kind == AttackKind::kZonal && c.attack.zone.empty()) config_error("zonal attack needs attack.zone");
  }
  if (j.contains("newton")) {
    const json& s = j["newton"];
    check_keys(s, {"max_iter", "init", "tau", "angle_scale_deg"}, "newton");
    read(s, "max_iter", c.newton.max_iter, "newton");
    if (s.contains("init")) {
      auto v = get<std::string>(s, "init", "newton");
      if (v == "flat") c.newton.init = NlsInit::kFlat;
      else if (v == "perturbed") c.newton.init = NlsInit::kPerturbed;
      else config_error(fmt::format("unknown newton.init '{}'", v));
    }
    read(s, "tau", c.newton.tau, "newton");
    read(s, "angle_scale_deg", c.newton.angle_scale_deg, "newton");
  }
  if (j.contains("vi")) {
    const json& s = j["vi"];
    check_keys(s, {"method", "enumeration_cap", "big_m", "socp", "norm"}, "vi");
    if (s.contains("method")) c.vi.method = parse_vi_method(get<std::string>(s, "method", "vi"));
    read(s, "enumeration_cap", c.vi.enumeration_cap, "vi");
    read(s, "big_m", c.vi.big_m, "vi");
    read(s, "socp", c.vi.socp, "vi");
    if (s.contains("norm")) c.vi.norm = parse_norm(get<std::string>(s, "norm", "vi"));
  }
  if (j.contains("bag")) {
    const json& s = j["bag"];
    check_keys(s, {"attacked", "heuristic", "socp"}, "bag");
    read(s, "attacked", c.bag.attacked, "bag");
    if (s.contains("heuristic")) c.bag.heuristic = parse_heuristic(get<std::string>(s, "heuristic", "bag"));
    read(s, "socp", c.bag.socp, "bag");
  }
  read(j, "seed", c.seed, "config");
  read(j, "seeds", c.seeds, "config");
  read(j, "repeat", c.repeat, "config");
  if (!c.seeds.empty()) {
    if (j.contains("repeat") && c.repeat != static_cast<int>(c.seeds.size()))
      config_error("config.repeat disagrees with the length of config.seeds");
    c.repeat = static_cast<int>(c.seeds.size());
  }
  if (c.repeat < 1) config_error("config.repeat must be at least 1");
  read(j, "output_dir", c.output_dir, "config");
  read(j, "threads", c.threads, "config");
  if (c.threads < 1) config_error("config.threads must be at least 1");
  read(j, "flag_threshold", c.flag_threshold, "config");
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open config '{}'", path));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), fs::path(path).parent_path().string());
}

uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  // splitmix64 finalizer over the combined word.
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<uint64_t> run_seeds(const ExperimentConfig& cfg) {
  if (!cfg.seeds.empty()) return cfg.seeds;
  std::vector<uint64_t> s(cfg.repeat);
  for (int r = 0; r < cfg.repeat; ++r) s[r] = cfg.seed + static_cast<uint64_t>(r);
  return s;
}

// ---------------------------------------------------------------------------
// Output helpers.

std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return "0";
  return fmt::format("{:.12g}", v);
}

std::optional<std::string> geojson_map(const Grid& grid, const std::vector<LineStatus>& lines,
                                       const std::vector<BusStatus>& buses) {
  if (!grid.has_coords()) return std::nullopt;
  auto finite = [](double v) -> json { return std::isfinite(v) ? json(v) : json(nullptr); };
  json features = json::array();
  for (const LineStatus& s : lines) {
    const Branch& br = grid.branches.at(s.branch);
    const auto& a = *grid.buses[br.from_bus].coords;
    const auto& b = *grid.buses[br.to_bus].coords;
    json f;
    f["type"] = "Feature";
    f["geometry"] = {{"type", "LineString"}, {"coordinates", {{a.first, a.second}, {b.first, b.second}}}};
    f["properties"] = {{"kind", "line"},
                       {"branch", br.id},
                       {"from_bus", br.from_bus},
                       {"to_bus", br.to_bus},
                       {"alpha_forward", finite(s.alpha_forward)},
                       {"alpha_backward", finite(s.alpha_backward)},
                       {"status", s.vulnerable ? "vulnerable" : "robust"},
                       {"critical", s.critical}};
    features.push_back(std::move(f));
  }
  for (const BusStatus& s : buses) {
    const Bus& bus = grid.buses.at(s.bus);
    json f;
    f["type"] = "Feature";
    f["geometry"] = {{"type", "Point"}, {"coordinates", {bus.coords->first, bus.coords->second}}};
    f["properties"] = {{"kind", "bus"},
                       {"bus", bus.id},
                       {"name", bus.name},
                       {"critical", s.critical},
                       {"critical_index", s.critical_index}};
    if (s.error) f["properties"]["error"] = finite(*s.error);
    features.push_back(std::move(f));
  }
  json fc = {{"type", "FeatureCollection"}, {"features", std::move(features)}};
  return fc.dump(1) + "\n";
}

std::string bar_chart_svg(const std::string& title, const std::vector<BarGroup>& groups) {
  static const char* kColors[] = {"#c0392b", "#e67e22", "#8e44ad", "#2980b9", "#16a085", "#7f8c8d"};
  const int bar_w = 22, gap = 30, left = 50, top = 40, plot_h = 200;
  size_t n_bars = 0;
  std::vector<std::string> names;
  for (const auto& g : groups) {
    n_bars = std::max(n_bars, g.bars.size());
    for (const auto& [n, v] : g.bars)
      if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
  }
  const int group_w = static_cast<int>(n_bars) * bar_w + gap;
  const int width = left + std::max<int>(1, static_cast<int>(groups.size())) * group_w + 160;
  const int height = top + plot_h + 60;
  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" "
      "font-family=\"sans-serif\" font-size=\"11\">\n",
      width, height, width, height);
  s += fmt::format("<text x=\"{}\" y=\"20\" font-size=\"14\">{}</text>\n", left, title);
  for (int t = 0; t <= 4; ++t) {
    int y = top + plot_h - t * plot_h / 4;
    s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#ddd\"/>\n", left, y, width - 160, y);
    s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}%</text>\n", left - 4, y + 4, t * 25);
  }
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    int x0 = left + static_cast<int>(gi) * group_w + gap / 2;
    for (size_t bi = 0; bi < groups[gi].bars.size(); ++bi) {
      const auto& [n, v] = groups[gi].bars[bi];
      size_t ci = std::find(names.begin(), names.end(), n) - names.begin();
      double f = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
      int h = static_cast<int>(std::lround(f * plot_h));
      s += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"><title>{}: {:.1f}%</title></rect>\n",
                       x0 + static_cast<int>(bi) * bar_w, top + plot_h - h, bar_w - 2, h, kColors[ci % 6], n,
                       100.0 * f);
    }
    s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                     x0 + static_cast<int>(groups[gi].bars.size()) * bar_w / 2, top + plot_h + 16, groups[gi].label);
  }
  for (size_t ci = 0; ci < names.size(); ++ci) {
    int y = top + static_cast<int>(ci) * 16;
    s += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n", width - 150, y,
                     kColors[ci % 6]);
    s += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", width - 135, y + 9, names[ci]);
  }
  s += "</svg>\n";
  return s;
}

// ---------------------------------------------------------------------------
// Runs.

namespace {

// Serializes every file write and records its hash for the manifest.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(RunReport& report) : report_(report) {
    std::error_code ec;
    fs::create_directories(report_.output_dir, ec);
    if (ec) throw Error(ErrorCode::kIo, fmt::format("cannot create '{}': {}", report_.output_dir, ec.message()));
  }

  void write(const std::string& name, const std::string& content) {
    std::lock_guard<std::mutex> lock(mu_);
    fs::path p = fs::path(report_.output_dir) / name;
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot write '{}'", p.string()));
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorCode::kIo, fmt::format("short write to '{}'", p.string()));
    report_.artifacts.push_back({name, detail::sha256_hex(content), content.size()});
  }

  void notice(const std::string& msg) {
    std::lock_guard<std::mutex> lock(mu_);
    report_.notices.push_back(msg);
  }

  void finish(const ExperimentConfig& cfg) {
    json arts = json::array();
    for (const Artifact& a : report_.artifacts) arts.push_back({{"path", a.path}, {"sha256", a.sha256}, {"bytes", a.bytes}});
    json m = {{"format", "gridshield-manifest"},
              {"version", 1},
              {"command", report_.command},
              {"name", cfg.name},
              {"case", fs::path(cfg.case_path).filename().string()},
              {"scenarios", {{"total", report_.scenarios}, {"failed", report_.failed}}},
              {"notices", report_.notices},
              {"artifacts", std::move(arts)}};
    fs::path p = fs::path(report_.output_dir) / "manifest.json";
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << m.dump(2) << "\n";
    if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot write '{}'", p.string()));
    report_.manifest_path = p.string();
  }

 private:
  RunReport& report_;
  std::mutex mu_;
};

RunReport start(const std::string& command, const ExperimentConfig& cfg) {
  RunReport r;
  r.command = command;
  r.output_dir = cfg.output_dir;
  return r;
}

std::string safe_name(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') c = '_';
  return s;
}

std::string join_ids(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
  return s;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Step1Config step1_config(const ExperimentConfig& cfg, Step1Variant v) {
  Step1Config c;
  c.variant = v;
  c.lambda = cfg.lambda;
  c.bdd_threshold = cfg.bdd_threshold;
  c.solver.tol = cfg.solver_tol;
  return c;
}

NlsConfig newton_config(const ExperimentConfig& cfg, const GroundTruthState& base, uint64_t seed) {
  NlsConfig c;
  c.max_newton_iter = cfg.newton.max_iter;
  c.init = cfg.newton.init;
  c.tau = cfg.newton.tau;
  c.angle_scale_deg = cfg.newton.angle_scale_deg;
  c.seed = derive_seed(seed, 3);
  if (c.init == NlsInit::kPerturbed) c.base = base;
  return c;
}

// Scattered line count: the requested share of measurements divided by the
// profile's mean number of flow sensors per line.
int scattered_lines(const ExperimentConfig& cfg, const SensingModel& model) {
  if (cfg.attack.n_lines >= 0) return cfg.attack.n_lines;
  if (cfg.attack.fraction <= 0.0) return 0;
  int flows = 0;
  for (const Measurement& m : model.rows) flows += m.is_flow();
  std::set<int> lines;
  for (const Measurement& m : model.rows)
    if (m.is_flow()) lines.insert(m.branch);
  if (lines.empty()) throw Error(ErrorCode::kConfig, "scattered attack needs a profile with flow sensors");
  double per_line = static_cast<double>(flows) / static_cast<double>(lines.size());
  return std::max(1, static_cast<int>(std::lround(cfg.attack.fraction * model.n_m() / per_line)));
}

ScenarioBatch make_batch(const ExperimentConfig& cfg, const SensingModel& model, const Grid& grid,
                         const GroundTruthState& state, uint64_t seed, const std::vector<int>* zone = nullptr) {
  NoiseModel nm;
  nm.sigma_vmag = cfg.noise.enabled ? cfg.noise.sigma_vmag : 0.0;
  nm.sigma_other = cfg.noise.enabled ? cfg.noise.sigma_other : 0.0;
  nm.seed = derive_seed(seed, 1);
  AttackSpec at;
  at.kind = cfg.attack.kind;
  at.seed = derive_seed(seed, 2);
  at.mag_lo = cfg.attack.mag_lo;
  at.mag_hi = cfg.attack.mag_hi;
  at.strict = cfg.attack.strict;
  at.default_secure = cfg.attack.default_secure;
  if (at.kind == AttackKind::kScattered) {
    at.n_lines = scattered_lines(cfg, model);
    if (at.n_lines == 0) at.kind = AttackKind::kNone;
  }
  if (at.kind == AttackKind::kZonal) at.zone = zone ? *zone : cfg.attack.zone;
  return generate(model, grid, state, nm, at);
}

struct EstimateOutcome {
  std::vector<double> vm, va;
  std::vector<int> detected;
  std::string status;
};

EstimateOutcome run_estimator(const ExperimentConfig& cfg, const std::string& name, const Grid& grid,
                              const SensingModel& model, const GroundTruthState& state, const Eigen::VectorXd& y,
                              uint64_t seed) {
  EstimateOutcome o;
  if (name == "newton") {
    NlsResult r = newton_se(grid, model, y, newton_config(cfg, state, seed));
    o.vm = std::move(r.vm);
    o.va = std::move(r.va);
    o.detected = std::move(r.removed_rows);
    o.status = r.converged ? "converged" : "not_converged";
  } else {
    EstimationResult r = estimate(grid, model, y, step1_config(cfg, parse_step1_variant(name)), cfg.step2, cfg.lambda2);
    o.vm = std::move(r.vm_hat);
    o.va = std::move(r.va_hat);
    o.detected = std::move(r.detected_support);
    o.status = to_string(r.solver_status);
  }
  return o;
}

void check_case(const ExperimentConfig& cfg, const ParsedCase& pc) {
  for (int k : cfg.attack.zone)
    if (k < 0 || k >= pc.grid.n_bus()) config_error(fmt::format("attack.zone bus {} out of range", k));
  for (int k : cfg.bag.attacked)
    if (k < 0 || k >= pc.grid.n_bus()) config_error(fmt::format("bag.attacked bus {} out of range", k));
}

}  // namespace

RunReport run_estimation(const ExperimentConfig& cfg) {
  RunReport report = start("estimate", cfg);
  ParsedCase pc = load_case(cfg.case_path);
  check_case(cfg, pc);
  ArtifactWriter writer(report);
  const auto seeds = run_seeds(cfg);
  const auto v_true = phasors(pc.state.vm, pc.state.va);
  const int np = static_cast<int>(cfg.profiles.size());
  const int ne = static_cast<int>(cfg.estimators.size());
  const int nr = static_cast<int>(seeds.size());

  std::vector<SensingModel> models;
  for (const auto& p : cfg.profiles)
    models.push_back(build_sensing_model(pc.grid, make_profile(pc.grid, p), RowNormMode::kEstimation));

  struct Row {
    double rmse = NAN, precision = NAN, recall = NAN, f1 = NAN, runtime = 0.0;
    int n_bad = 0, n_detected = 0;
    std::string status = "error";
    bool failed = true;
  };
  // One task per (profile, run); every estimator sees the same batch.
  std::vector<Row> rows(static_cast<size_t>(np) * nr * ne);
  auto at = [&](int p, int e, int r) -> Row& { return rows[(static_cast<size_t>(p) * ne + e) * nr + r]; };
  auto errors = detail::parallel_for(np * nr, cfg.threads, [&](int task) {
    int p = task / nr, r = task % nr;
    const SensingModel& model = models[p];
    ScenarioBatch sb = make_batch(cfg, model, pc.grid, pc.state, seeds[r]);
    for (int e = 0; e < ne; ++e) {
      Row& row = at(p, e, r);
      row.n_bad = static_cast<int>(sb.J_true.size());
      auto t0 = std::chrono::steady_clock::now();
      try {
        EstimateOutcome o = run_estimator(cfg, cfg.estimators[e], pc.grid, model, pc.state, sb.y, seeds[r]);
        row.runtime = seconds_since(t0);
        row.rmse = rmse(v_true, phasors(o.vm, o.va));
        F1Score f = f1(sb.J_true, o.detected);
        row.precision = f.precision;
        row.recall = f.recall;
        row.f1 = f.f1;
        row.n_detected = static_cast<int>(o.detected.size());
        row.status = o.status;
        row.failed = false;
      } catch (const std::exception& ex) {
        row.runtime = seconds_since(t0);
        writer.notice(fmt::format("profile {} estimator {} seed {}: {}", cfg.profiles[p], cfg.estimators[e], seeds[r],
                                  ex.what()));
      }
    }
  });
  for (int t = 0; t < np * nr; ++t)
    if (!errors[t].empty()) writer.notice(fmt::format("profile {} seed {}: {}", cfg.profiles[t / nr], seeds[t % nr], errors[t]));

  std::string csv = "run,profile,estimator,seed,n_meas,n_bad,n_detected,rmse,precision,recall,f1,status\n";
  json timings = json::array();
  for (int p = 0; p < np; ++p)
    for (int e = 0; e < ne; ++e) {
      double s_rmse = 0, s_p = 0, s_r = 0, s_f = 0, s_bad = 0, s_det = 0;
      int ok = 0;
      for (int r = 0; r < nr; ++r) {
        const Row& row = at(p, e, r);
        ++report.scenarios;
        if (row.failed) ++report.failed;
        csv += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", r, cfg.profiles[p], cfg.estimators[e], seeds[r],
                           models[p].n_m(), row.n_bad, row.n_detected, csv_number(row.rmse), csv_number(row.precision),
                           csv_number(row.recall), csv_number(row.f1), row.status);
        timings.push_back({{"run", r}, {"profile", cfg.profiles[p]}, {"estimator", cfg.estimators[e]},
                           {"seed", seeds[r]}, {"runtime_s", row.runtime}});
        if (row.failed) continue;
        ++ok;
        s_rmse += row.rmse;
        s_p += row.precision;
        s_r += row.recall;
        s_f += row.f1;
        s_bad += row.n_bad;
        s_det += row.n_detected;
      }
      double d = ok ? ok : NAN;
      csv += fmt::format("aggregate,{},{},,{},{},{},{},{},{},{},{}\n", cfg.profiles[p], cfg.estimators[e], models[p].n_m(),
                         csv_number(s_bad / d), csv_number(s_det / d), csv_number(s_rmse / d), csv_number(s_p / d),
                         csv_number(s_r / d), csv_number(s_f / d), fmt::format("completed={}/{}", ok, nr));
    }
  writer.write("estimation.csv", csv);
  writer.write("timings.json", timings.dump(1) + "\n");
  writer.finish(cfg);
  return report;
}

RunReport run_vulnerability(const ExperimentConfig& cfg) {
  RunReport report = start("vulnmap", cfg);
  ParsedCase pc = load_case(cfg.case_path);
  check_case(cfg, pc);
  const Grid& g = pc.grid;
  ArtifactWriter writer(report);
  ViOptions vo;
  vo.method = cfg.vi.method;
  vo.enumeration_cap = cfg.vi.enumeration_cap;
  vo.big_m = cfg.vi.big_m;
  const Eigen::VectorXd x_lifted = lift_state(pc.state, g);

  std::string lines_csv =
      "profile,branch,from_bus,to_bus,direction,alpha_lp,alpha_socp,rho,method,v_line,c_line\n";
  std::string buses_csv = "profile,bus,c_bus,critical_index\n";
  std::string summary =
      "region,profile,buses,lines,lp_v_lines_pct,lp_c_lines_pct,lp_c_bus_pct,lp_bus_ci,"
      "socp_v_lines_pct,socp_c_lines_pct,socp_c_bus_pct,socp_bus_ci\n";
  std::vector<BarGroup> bars;
  const std::string region = fs::path(cfg.case_path).stem().string();

  for (const std::string& prof : cfg.profiles) {
    ++report.scenarios;
    try {
      SensingModel model = build_sensing_model(g, make_profile(g, prof), RowNormMode::kVi);
      ReportOptions ro;
      ro.vi = vo;
      ro.socp = cfg.vi.socp;
      if (ro.socp) ro.x_lifted = x_lifted;
      ro.threads = cfg.threads;
      VulnerabilityReport rep = vulnerability_report(g, model, ro);
      VulnerabilityReport lp = cfg.vi.socp ? classify(g, rep.forward, rep.backward, false) : rep;

      const int nl = g.n_branch();
      std::vector<std::optional<double>> rho(2 * static_cast<size_t>(nl));
      auto errs = detail::parallel_for(2 * nl, cfg.threads, [&](int t) {
        rho[t] = line_incoherence(g, model, t / 2, t % 2 == 0, cfg.vi.norm);
      });
      for (int t = 0; t < 2 * nl; ++t)
        if (!errs[t].empty()) throw Error(ErrorCode::kSolver, errs[t]);

      for (int l = 0; l < nl; ++l) {
        const Branch& br = g.branches[l];
        for (int d = 0; d < 2; ++d) {
          const LineVIResult& r = d == 0 ? rep.forward[l] : rep.backward[l];
          const auto& rh = rho[2 * l + d];
          lines_csv += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", prof, l, br.from_bus, br.to_bus,
                                   d == 0 ? "forward" : "backward", csv_number(r.alpha_lp),
                                   r.alpha_socp ? csv_number(*r.alpha_socp) : "", rh ? csv_number(*rh) : "",
                                   to_string(r.method), int(rep.v_line[l]), int(rep.c_line[l]));
        }
      }
      for (int k = 0; k < g.n_bus(); ++k)
        buses_csv += fmt::format("{},{},{},{}\n", prof, k, int(rep.c_bus[k]), rep.critical_index[k]);

      auto pct = [](double f) { return csv_number(100.0 * f); };
      summary += fmt::format("{},{},{},{},{},{},{},{},", region, prof, g.n_bus(), nl, pct(lp.v_line_fraction),
                             pct(lp.c_line_fraction), pct(lp.c_bus_fraction), csv_number(lp.mean_critical_index));
      if (cfg.vi.socp)
        summary += fmt::format("{},{},{},{}\n", pct(rep.v_line_fraction), pct(rep.c_line_fraction),
                               pct(rep.c_bus_fraction), csv_number(rep.mean_critical_index));
      else
        summary += ",,,\n";

      BarGroup grp{prof, {{"V-lines LP", lp.v_line_fraction}, {"C-lines LP", lp.c_line_fraction},
                          {"C-bus LP", lp.c_bus_fraction}}};
      if (cfg.vi.socp) {
        grp.bars.push_back({"V-lines SOCP", rep.v_line_fraction});
        grp.bars.push_back({"C-lines SOCP", rep.c_line_fraction});
        grp.bars.push_back({"C-bus SOCP", rep.c_bus_fraction});
      }
      bars.push_back(std::move(grp));

      std::vector<LineStatus> ls;
      for (int l = 0; l < nl; ++l) {
        auto alpha = [&](const LineVIResult& r) { return cfg.vi.socp ? *r.alpha_socp : r.alpha_lp; };
        ls.push_back({l, alpha(rep.forward[l]), alpha(rep.backward[l]), rep.v_line[l] != 0, rep.c_line[l] != 0});
      }
      std::vector<BusStatus> bs;
      for (int k = 0; k < g.n_bus(); ++k) bs.push_back({k, rep.c_bus[k] != 0, rep.critical_index[k], std::nullopt});
      if (auto gj = geojson_map(g, ls, bs)) writer.write(fmt::format("map_{}.geojson", safe_name(prof)), *gj);
      else writer.notice(fmt::format("profile {}: bus coordinates missing, GeoJSON map skipped", prof));
    } catch (const std::exception& e) {
      ++report.failed;
      writer.notice(fmt::format("profile {}: {}", prof, e.what()));
    }
  }
  writer.write("vulnerability_lines.csv", lines_csv);
  writer.write("vulnerability_buses.csv", buses_csv);
  writer.write("summary.csv", summary);
  writer.write("summary.svg", bar_chart_svg(fmt::format("{}: share of V-lines, C-lines and C-buses", region), bars));
  writer.finish(cfg);
  return report;
}

RunReport run_boundary_demo(const ExperimentConfig& cfg) {
  RunReport report = start("boundary", cfg);
  if (cfg.attack.kind == AttackKind::kScattered) config_error("boundary demo takes a zonal attack or none");
  ParsedCase pc = load_case(cfg.case_path);
  check_case(cfg, pc);
  const Grid& g = pc.grid;
  ArtifactWriter writer(report);
  const auto seeds = run_seeds(cfg);
  const std::string proposed = cfg.estimators.front() == "newton" && cfg.estimators.size() > 1 ? cfg.estimators[1]
                                                                                               : cfg.estimators.front();
  if (proposed == "newton") config_error("boundary demo needs a step-1 estimator besides newton");
  const auto v_true = phasors(pc.state.vm, pc.state.va);

  std::string csv = "profile,run,seed,bus,region,err_newton,err_proposed,flag_newton,flag_proposed\n";
  std::string summary =
      "profile,run,seed,estimator,zone_buses,certified,max_alpha,c_min,flagged_newton_zone,flagged_newton_outside,"
      "flagged_proposed_zone,flagged_proposed_outside,status_newton,status_proposed\n";

  for (const std::string& prof : cfg.profiles) {
    SensingModel em, vm;
    RegionPartition part;
    double max_alpha = 0.0, c_min = 0.0;
    try {
      em = build_sensing_model(g, make_profile(g, prof), RowNormMode::kEstimation);
      vm = build_sensing_model(g, make_profile(g, prof), RowNormMode::kVi);
      if (cfg.attack.zone.empty()) {
        for (int k = 0; k < g.n_bus(); ++k) part.safe.push_back(k);
      } else {
        part = build_partition(g, em, cfg.attack.zone);
      }
      for (const auto& s : part.enlargement_log) writer.notice(fmt::format("profile {}: {}", prof, s));
      for (int l : part.lines_at_bi) {
        const Branch& br = g.branches[l];
        bool fwd = std::binary_search(part.attacked.begin(), part.attacked.end(), br.from_bus);
        max_alpha = std::max(max_alpha, line_vi_lp(g, vm, l, fwd).alpha_lp);
      }
      c_min = lower_eigenvalue(em, part).value;
    } catch (const std::exception& e) {
      report.scenarios += static_cast<int>(seeds.size());
      report.failed += static_cast<int>(seeds.size());
      writer.notice(fmt::format("profile {}: {}", prof, e.what()));
      continue;
    }
    const bool certified = !part.lines_at_bi.empty() && max_alpha < 1.0 && c_min > 0.0;
    std::vector<std::string> region(g.n_bus(), "safe");
    for (int k : part.outer) region[k] = "outer";
    for (int k : part.inner) region[k] = "inner";
    for (int k : part.attacked) region[k] = "attacked";

    struct Out {
      std::vector<double> en, ep;
      std::string sn, sp;
    };
    std::vector<Out> outs(seeds.size());
    auto errs = detail::parallel_for(static_cast<int>(seeds.size()), cfg.threads, [&](int r) {
      ScenarioBatch sb = make_batch(cfg, em, g, pc.state, seeds[r], &part.attacked);
      EstimateOutcome n = run_estimator(cfg, "newton", g, em, pc.state, sb.y, seeds[r]);
      EstimateOutcome p = run_estimator(cfg, proposed, g, em, pc.state, sb.y, seeds[r]);
      auto vn = phasors(n.vm, n.va), vp = phasors(p.vm, p.va);
      Out& o = outs[r];
      for (int k = 0; k < g.n_bus(); ++k) {
        o.en.push_back(std::abs(vn[k] - v_true[k]));
        o.ep.push_back(std::abs(vp[k] - v_true[k]));
      }
      o.sn = n.status;
      o.sp = p.status;
    });
    std::vector<BusStatus> map_buses;
    for (size_t r = 0; r < seeds.size(); ++r) {
      ++report.scenarios;
      if (!errs[r].empty()) {
        ++report.failed;
        writer.notice(fmt::format("profile {} seed {}: {}", prof, seeds[r], errs[r]));
        continue;
      }
      const Out& o = outs[r];
      int fnz = 0, fno = 0, fpz = 0, fpo = 0;
      for (int k = 0; k < g.n_bus(); ++k) {
        bool fn = o.en[k] > cfg.flag_threshold, fp = o.ep[k] > cfg.flag_threshold;
        // Buses outside the attacked zone and its inner boundary count as outside.
        bool inside = region[k] == "attacked" || region[k] == "inner";
        (inside ? fnz : fno) += fn;
        (inside ? fpz : fpo) += fp;
        csv += fmt::format("{},{},{},{},{},{},{},{},{}\n", prof, r, seeds[r], k, region[k], csv_number(o.en[k]),
                           csv_number(o.ep[k]), int(fn), int(fp));
      }
      summary += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", prof, r, seeds[r], proposed,
                             join_ids(part.attacked), int(certified), csv_number(max_alpha), csv_number(c_min), fnz,
                             fno, fpz, fpo, o.sn, o.sp);
      if (map_buses.empty())
        for (int k = 0; k < g.n_bus(); ++k) map_buses.push_back({k, o.ep[k] > cfg.flag_threshold, 0, o.ep[k]});
    }
    if (!map_buses.empty()) {
      if (auto gj = geojson_map(g, {}, map_buses)) writer.write(fmt::format("boundary_{}.geojson", safe_name(prof)), *gj);
      else writer.notice(fmt::format("profile {}: bus coordinates missing, GeoJSON map skipped", prof));
    }
  }
  writer.write("boundary_buses.csv", csv);
  writer.write("boundary_summary.csv", summary);
  writer.finish(cfg);
  return report;
}

RunReport run_bag_vi(const ExperimentConfig& cfg) {
  RunReport report = start("bagvi", cfg);
  if (cfg.bag.attacked.empty()) config_error("bag analysis needs bag.attacked");
  ParsedCase pc = load_case(cfg.case_path);
  check_case(cfg, pc);
  const Grid& g = pc.grid;
  ArtifactWriter writer(report);
  ViOptions vo;
  vo.method = cfg.vi.method;
  vo.enumeration_cap = cfg.vi.enumeration_cap;
  vo.big_m = cfg.vi.big_m;
  const Eigen::VectorXd x_lifted = lift_state(pc.state, g);

  TreeDecomposition td = tree_decompose(g, cfg.bag.heuristic);
  TreeCheck chk = validate_tree(td, g);
  if (!chk.ok()) throw Error(ErrorCode::kSolver, "tree decomposition failed validation");
  json tree = {{"width", td.width}, {"bags", td.bags}, {"edges", json::array()}};
  for (auto [a, b] : td.edges) tree["edges"].push_back({a, b});
  writer.write("tree.json", tree.dump(1) + "\n");

  std::string csv = "profile,link_bag,infected_bag,adhesion,outer_link,n_m_ad,n_m_ol,n_x_lk,alpha,method\n";
  std::string summary = "profile,width,bags,infected,link,safe,infected_subtree,results,max_alpha,note\n";
  for (const std::string& prof : cfg.profiles) {
    ++report.scenarios;
    try {
      SensingModel model = build_sensing_model(g, make_profile(g, prof), RowNormMode::kVi);
      BagAnalysis a = bag_vi(g, model, td, cfg.bag.attacked, cfg.bag.socp, cfg.bag.socp ? &x_lifted : nullptr, vo);
      double max_alpha = 0.0;
      for (const BagVIResult& r : a.results) {
        max_alpha = std::max(max_alpha, r.alpha);
        csv += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", prof, r.link_bag, r.infected_bag, join_ids(r.adhesion),
                           join_ids(r.outer_link), r.m_ad.size(), r.m_ol.size(), r.x_lk.size(), csv_number(r.alpha),
                           to_string(r.method));
      }
      std::string note = a.note;
      std::replace(note.begin(), note.end(), ',', ';');
      summary += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", prof, td.width, td.bags.size(), a.infected.size(),
                             a.link.size(), a.safe.size(), int(a.infected_subtree), a.results.size(),
                             a.results.empty() ? "" : csv_number(max_alpha), note);
      if (!a.note.empty()) writer.notice(fmt::format("profile {}: {}", prof, a.note));
    } catch (const std::exception& e) {
      ++report.failed;
      writer.notice(fmt::format("profile {}: {}", prof, e.what()));
    }
  }
  writer.write("bagvi.csv", csv);
  writer.write("bagvi_summary.csv", summary);
  writer.finish(cfg);
  return report;
}

RunReport run_command(const std::string& command, const ExperimentConfig& cfg) {
  if (command == "estimate") return run_estimation(cfg);
  if (command == "vulnmap") return run_vulnerability(cfg);
  if (command == "boundary") return run_boundary_demo(cfg);
  if (command == "bagvi") return run_bag_vi(cfg);
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown command '{}'", command));
}

}  // namespace gs
