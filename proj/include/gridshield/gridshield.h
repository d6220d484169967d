/* Copyright 2026 The gridshield Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef GRIDSHIELD_GRIDSHIELD_H_
#define GRIDSHIELD_GRIDSHIELD_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define GS_API __declspec(dllexport)
#else
#define GS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gs_status {
  GS_OK = 0,
  GS_E_INVALID_ARGUMENT = 1,
  GS_E_PARSE = 2,
  GS_E_DANGLING_BUS = 3,
  GS_E_ZERO_IMPEDANCE = 4,
  GS_E_DIMENSION = 5,
  GS_E_RANK_DEFICIENT = 6,
  GS_E_SOLVER = 7,
  GS_E_UNSUPPORTED = 8,
  GS_E_IO = 9,
  GS_E_CONFIG = 10,
  GS_E_BIG_M_TOO_SMALL = 11,
  GS_E_INTERNAL = 99
} gs_status;

typedef struct gs_case gs_case;
typedef struct gs_model gs_model;
typedef struct gs_config gs_config;
typedef struct gs_report gs_report;

GS_API const char* gs_version(void);
GS_API const char* gs_status_name(gs_status status);
/* Message of the last failing call on this thread; "" when none. */
GS_API const char* gs_last_error(void);

/* Grid cases (MATPOWER subset or JSON grid). */
GS_API gs_status gs_case_load(const char* path, gs_case** out);
GS_API void gs_case_free(gs_case* c);
GS_API int gs_case_n_bus(const gs_case* c);
GS_API int gs_case_n_branch(const gs_case* c);
/* Stored operating point, n_bus entries each; va in radians. */
GS_API gs_status gs_case_state(const gs_case* c, double* vm, double* va, size_t n_bus);

/* Sensing models. vi_mode selects the unit-row convention used by the
 * vulnerability routines; 0 builds the estimation convention. The model
 * keeps its case alive. */
GS_API gs_status gs_model_build(const gs_case* c, const char* preset, int vi_mode, gs_model** out);
GS_API void gs_model_free(gs_model* m);
GS_API int gs_model_n_rows(const gs_model* m);
GS_API int gs_model_n_cols(const gs_model* m);
/* Noiseless normalized measurements of the case's operating point. */
GS_API gs_status gs_model_measure(const gs_model* m, double* y, size_t n_rows);

/* Two-step estimate. variant: "l1", "l1_soc", "l2l1", "l2l1_soc" or
 * "newton". support receives up to support_cap detected row ids; the full
 * count goes to *n_support. Any of support and n_support may be NULL. */
GS_API gs_status gs_estimate(const gs_model* m, const char* variant, const double* y, size_t n_rows, double* vm,
                             double* va, size_t n_bus, int* support, size_t support_cap, size_t* n_support);

/* Vulnerability index of a line direction. method: "enumeration", "lcp" or
 * "mip". socp != 0 adds the cone constraints at the case's operating point.
 * Infinite values are reported as HUGE_VAL. */
GS_API gs_status gs_line_vi(const gs_model* m, int branch, int forward, const char* method, int socp, double* alpha);

/* Experiment runs. */
GS_API gs_status gs_config_load(const char* path, gs_config** out);
GS_API gs_status gs_config_parse(const char* json_text, const char* base_dir, gs_config** out);
GS_API void gs_config_free(gs_config* c);

typedef struct gs_run_options {
  const char* out_dir; /* NULL keeps the configured directory */
  int threads;         /* <= 0 keeps the configured count */
  int has_seed;        /* nonzero: seed replaces the configured seeds */
  uint64_t seed;
} gs_run_options;

/* command: "estimate", "vulnmap", "boundary" or "bagvi". A run whose
 * scenarios partly failed still returns GS_OK; inspect the report. */
GS_API gs_status gs_run(const gs_config* c, const char* command, const gs_run_options* opts, gs_report** out);
GS_API void gs_report_free(gs_report* r);
GS_API int gs_report_scenarios(const gs_report* r);
GS_API int gs_report_failed(const gs_report* r);
GS_API const char* gs_report_manifest(const gs_report* r);
GS_API size_t gs_report_artifact_count(const gs_report* r);
GS_API const char* gs_report_artifact_path(const gs_report* r, size_t i);
GS_API const char* gs_report_artifact_sha256(const gs_report* r, size_t i);
GS_API size_t gs_report_notice_count(const gs_report* r);
GS_API const char* gs_report_notice(const gs_report* r, size_t i);

#ifdef __cplusplus
}
#endif

#endif /* GRIDSHIELD_GRIDSHIELD_H_ */
