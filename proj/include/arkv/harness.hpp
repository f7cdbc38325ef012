/*
 * Copyright (c) The arkv authors.
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

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "arkv/generate.hpp"
#include "arkv/model.hpp"
#include "arkv/trace.hpp"

namespace arkv {

struct SyntheticWorkload {
  std::uint64_t seed = 1;
  int prompt_len = 128;
  int gen_len = 256;
};

struct TraceWorkload {
  std::string path;
};

struct ReportConfig {
  std::string output_dir = "arkv_report";
};

struct RunConfig {
  ModelConfig model;
  std::vector<StrategyConfig> strategies;
  std::variant<SyntheticWorkload, TraceWorkload> workload;
  ReportConfig report;
  std::optional<std::string> weights_path;  // flat weight file, overrides random init
  kernels::Exec exec = kernels::Exec::kParallel;
};

/// Parses a JSON run configuration. Unknown keys, missing workloads and
/// invalid values raise ConfigError.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Uniform random prompt tokens from the workload seed.
std::vector<int> synthetic_prompt(const SyntheticWorkload& w, int vocab_size);

struct StrategyRun {
  StrategyConfig strategy;
  std::vector<int> tokens;
  DecodeReport report;
};

struct RunOutcome {
  ModelConfig model;
  std::int64_t prompt_len = 0;
  std::vector<StrategyRun> runs;
};

/// Executes every strategy on the synthetic workload with shared weights
/// and prompt. When a base strategy is present (or `pair_with_base`), every
/// other strategy runs teacher-forced on the base tokens and carries
/// fidelity and relative throughput.
RunOutcome run(const RunConfig& cfg, bool pair_with_base = false);

/// summary.txt, summary.json, steps.csv (deterministic) and timing.csv.
void write_reports(const RunOutcome& outcome, const std::filesystem::path& dir);

/// replay.json and plans.csv for a trace replay.
void write_replay_report(const ReplayResult& result, const StrategyConfig& strategy,
                         const std::filesystem::path& dir);

/// Machine-readable forms, also used by the golden tests.
std::string steps_csv(const RunOutcome& outcome);
std::string summary_json(const RunOutcome& outcome);
std::string summary_text(const RunOutcome& outcome);
std::string timing_csv(const RunOutcome& outcome);

}  // namespace arkv
