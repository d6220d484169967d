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

#include "gridshield/gridshield.h"

#include <cmath>
#include <memory>
#include <new>
#include <string>

#include "gridshield/experiment.hpp"

struct gs_case {
  std::shared_ptr<const gs::ParsedCase> pc;
};

struct gs_model {
  std::shared_ptr<const gs::ParsedCase> pc;
  gs::SensingModel model;
};

struct gs_config {
  gs::ExperimentConfig cfg;
};

struct gs_report {
  gs::RunReport report;
};

namespace {

thread_local std::string g_last_error;

template <class F>
gs_status guard(F&& f) {
  try {
    f();
    g_last_error.clear();
    return GS_OK;
  } catch (const gs::Error& e) {
    g_last_error = e.what();
    return static_cast<gs_status>(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return GS_E_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return GS_E_INTERNAL;
  }
}

void require(bool cond, const char* what) {
  if (!cond) throw gs::Error(gs::ErrorCode::kInvalidArgument, what);
}

}  // namespace

extern "C" {

const char* gs_version(void) { return "0.1.0"; }

const char* gs_status_name(gs_status s) {
  switch (s) {
    case GS_OK: return "ok";
    case GS_E_INVALID_ARGUMENT: return "invalid_argument";
    case GS_E_PARSE: return "parse";
    case GS_E_DANGLING_BUS: return "dangling_bus";
    case GS_E_ZERO_IMPEDANCE: return "zero_impedance";
    case GS_E_DIMENSION: return "dimension";
    case GS_E_RANK_DEFICIENT: return "rank_deficient";
    case GS_E_SOLVER: return "solver";
    case GS_E_UNSUPPORTED: return "unsupported";
    case GS_E_IO: return "io";
    case GS_E_CONFIG: return "config";
    case GS_E_BIG_M_TOO_SMALL: return "big_m_too_small";
    case GS_E_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* gs_last_error(void) { return g_last_error.c_str(); }

gs_status gs_case_load(const char* path, gs_case** out) {
  return guard([&] {
    require(path && out, "null argument");
    *out = nullptr;
    auto pc = std::make_shared<const gs::ParsedCase>(gs::load_case(path));
    *out = new gs_case{std::move(pc)};
  });
}

void gs_case_free(gs_case* c) { delete c; }

int gs_case_n_bus(const gs_case* c) { return c ? c->pc->grid.n_bus() : 0; }
int gs_case_n_branch(const gs_case* c) { return c ? c->pc->grid.n_branch() : 0; }

gs_status gs_case_state(const gs_case* c, double* vm, double* va, size_t n_bus) {
  return guard([&] {
    require(c && vm && va, "null argument");
    require(n_bus == static_cast<size_t>(c->pc->grid.n_bus()), "buffer length differs from the bus count");
    for (size_t k = 0; k < n_bus; ++k) {
      vm[k] = c->pc->state.vm[k];
      va[k] = c->pc->state.va[k];
    }
  });
}

gs_status gs_model_build(const gs_case* c, const char* preset, int vi_mode, gs_model** out) {
  return guard([&] {
    require(c && preset && out, "null argument");
    *out = nullptr;
    const gs::Grid& g = c->pc->grid;
    auto mode = vi_mode ? gs::RowNormMode::kVi : gs::RowNormMode::kEstimation;
    *out = new gs_model{c->pc, gs::build_sensing_model(g, gs::make_profile(g, preset), mode)};
  });
}

void gs_model_free(gs_model* m) { delete m; }

int gs_model_n_rows(const gs_model* m) { return m ? m->model.n_m() : 0; }
int gs_model_n_cols(const gs_model* m) { return m ? m->model.n_x() : 0; }

gs_status gs_model_measure(const gs_model* m, double* y, size_t n_rows) {
  return guard([&] {
    require(m && y, "null argument");
    require(n_rows == static_cast<size_t>(m->model.n_m()), "buffer length differs from the row count");
    Eigen::VectorXd v = gs::evaluate(m->model, m->pc->grid, m->pc->state);
    for (size_t i = 0; i < n_rows; ++i) y[i] = v[static_cast<Eigen::Index>(i)];
  });
}

gs_status gs_estimate(const gs_model* m, const char* variant, const double* y, size_t n_rows, double* vm, double* va,
                      size_t n_bus, int* support, size_t support_cap, size_t* n_support) {
  return guard([&] {
    require(m && variant && y && vm && va, "null argument");
    require(n_rows == static_cast<size_t>(m->model.n_m()), "y length differs from the row count");
    const gs::Grid& g = m->pc->grid;
    require(n_bus == static_cast<size_t>(g.n_bus()), "output length differs from the bus count");
    if (m->model.mode != gs::RowNormMode::kEstimation)
      throw gs::Error(gs::ErrorCode::kInvalidArgument, "estimation needs a model built with vi_mode = 0");
    Eigen::Map<const Eigen::VectorXd> yv(y, static_cast<Eigen::Index>(n_rows));
    std::vector<double> rm, ra;
    std::vector<int> sup;
    if (std::string(variant) == "newton") {
      gs::NlsResult r = gs::newton_se(g, m->model, yv, gs::NlsConfig{});
      rm = std::move(r.vm);
      ra = std::move(r.va);
      sup = std::move(r.removed_rows);
    } else {
      gs::Step1Config cfg;
      cfg.variant = gs::parse_step1_variant(variant);
      gs::EstimationResult r = gs::estimate(g, m->model, yv, cfg);
      rm = std::move(r.vm_hat);
      ra = std::move(r.va_hat);
      sup = std::move(r.detected_support);
    }
    for (size_t k = 0; k < n_bus; ++k) {
      vm[k] = rm[k];
      va[k] = ra[k];
    }
    if (support)
      for (size_t i = 0; i < sup.size() && i < support_cap; ++i) support[i] = sup[i];
    if (n_support) *n_support = sup.size();
  });
}

gs_status gs_line_vi(const gs_model* m, int branch, int forward, const char* method, int socp, double* alpha) {
  return guard([&] {
    require(m && method && alpha, "null argument");
    const gs::Grid& g = m->pc->grid;
    require(branch >= 0 && branch < g.n_branch(), "branch out of range");
    gs::ViOptions o;
    o.method = gs::parse_vi_method(method);
    if (socp) {
      Eigen::VectorXd x = gs::lift_state(m->pc->state, g);
      *alpha = *gs::line_vi_socp(g, m->model, branch, forward != 0, x, o).alpha_socp;
    } else {
      *alpha = gs::line_vi_lp(g, m->model, branch, forward != 0, o).alpha_lp;
    }
    if (std::isinf(*alpha)) *alpha = HUGE_VAL;
  });
}

gs_status gs_config_load(const char* path, gs_config** out) {
  return guard([&] {
    require(path && out, "null argument");
    *out = nullptr;
    *out = new gs_config{gs::load_config(path)};
  });
}

gs_status gs_config_parse(const char* json_text, const char* base_dir, gs_config** out) {
  return guard([&] {
    require(json_text && out, "null argument");
    *out = nullptr;
    *out = new gs_config{gs::parse_config(json_text, base_dir ? base_dir : "")};
  });
}

void gs_config_free(gs_config* c) { delete c; }

gs_status gs_run(const gs_config* c, const char* command, const gs_run_options* opts, gs_report** out) {
  return guard([&] {
    require(c && command && out, "null argument");
    *out = nullptr;
    gs::ExperimentConfig cfg = c->cfg;
    if (opts) {
      if (opts->out_dir) cfg.output_dir = opts->out_dir;
      if (opts->threads > 0) cfg.threads = opts->threads;
      if (opts->has_seed) {
        cfg.seed = opts->seed;
        cfg.seeds.clear();
      }
    }
    *out = new gs_report{gs::run_command(command, cfg)};
  });
}

void gs_report_free(gs_report* r) { delete r; }

int gs_report_scenarios(const gs_report* r) { return r ? r->report.scenarios : 0; }
int gs_report_failed(const gs_report* r) { return r ? r->report.failed : 0; }
const char* gs_report_manifest(const gs_report* r) { return r ? r->report.manifest_path.c_str() : ""; }

size_t gs_report_artifact_count(const gs_report* r) { return r ? r->report.artifacts.size() : 0; }

const char* gs_report_artifact_path(const gs_report* r, size_t i) {
  return r && i < r->report.artifacts.size() ? r->report.artifacts[i].path.c_str() : nullptr;
}

const char* gs_report_artifact_sha256(const gs_report* r, size_t i) {
  return r && i < r->report.artifacts.size() ? r->report.artifacts[i].sha256.c_str() : nullptr;
}

size_t gs_report_notice_count(const gs_report* r) { return r ? r->report.notices.size() : 0; }

const char* gs_report_notice(const gs_report* r, size_t i) {
  return r && i < r->report.notices.size() ? r->report.notices[i].c_str() : nullptr;
}

}  // extern "C"
