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

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gridshield/gridshield.h"

namespace {

struct Args {
  std::string config;
  std::string out;
  int threads = 0;
  std::optional<uint64_t> seed;
};

void add_common(CLI::App* sub, Args& a) {
  sub->add_option("--config", a.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", a.out, "output directory (overrides output_dir)");
  sub->add_option("--threads", a.threads, "worker threads (overrides threads)")->check(CLI::PositiveNumber);
  sub->add_option("--seed", a.seed, "base seed (overrides seed and seeds)");
}

int fail(gs_status s) {
  std::fprintf(stderr, "gridshield: %s: %s\n", gs_status_name(s), gs_last_error());
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gridshield: robust state estimation and vulnerability analysis"};
  app.set_version_flag("--version", gs_version());
  app.require_subcommand(1);
  Args args;
  const char* commands[][2] = {{"estimate", "run estimation scenarios and write per-run and aggregate metrics"},
                               {"vulnmap", "compute per-line vulnerability indices, summaries and maps"},
                               {"boundary", "compare per-bus errors of Newton and the convex estimator"},
                               {"bagvi", "compute bag-level vulnerability on a tree decomposition"}};
  for (auto& c : commands) add_common(app.add_subcommand(c[0], c[1]), args);
  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  gs_config* cfg = nullptr;
  gs_status s = gs_config_load(args.config.c_str(), &cfg);
  if (s != GS_OK) return fail(s);
  gs_run_options opts{};
  opts.out_dir = args.out.empty() ? nullptr : args.out.c_str();
  opts.threads = args.threads;
  opts.has_seed = args.seed.has_value();
  opts.seed = args.seed.value_or(0);
  gs_report* rep = nullptr;
  s = gs_run(cfg, command.c_str(), &opts, &rep);
  gs_config_free(cfg);
  if (s != GS_OK) return fail(s);

  for (size_t i = 0; i < gs_report_notice_count(rep); ++i) std::fprintf(stderr, "notice: %s\n", gs_report_notice(rep, i));
  for (size_t i = 0; i < gs_report_artifact_count(rep); ++i)
    std::printf("%s  %s\n", gs_report_artifact_sha256(rep, i), gs_report_artifact_path(rep, i));
  const int total = gs_report_scenarios(rep), failed = gs_report_failed(rep);
  std::printf("%s: %d/%d scenarios completed; manifest %s\n", command.c_str(), total - failed, total,
              gs_report_manifest(rep));
  gs_report_free(rep);
  return failed == 0 ? 0 : 1;
}
