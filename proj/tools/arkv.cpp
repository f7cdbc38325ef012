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

// Command-line front end.
//
// Exit codes: 0 success, 2 bad usage or config, 3 unreadable or malformed
// file, 4 incompatible shapes or lengths, 5 cache integrity or sequencing
// failure, 6 numeric failure, 1 anything else.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "arkv/error.hpp"
#include "arkv/harness.hpp"
#include "arkv/trace.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> budget;
  std::string out;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "Run configuration (JSON)")->required();
  cmd->add_option("--seed", o.seed, "Override the synthetic workload seed");
  cmd->add_option("--budget", o.budget, "Override the budget of every non-base strategy");
  cmd->add_option("-o,--out", o.out, "Output directory (defaults to report.output_dir)");
}

arkv::RunConfig configure(const Overrides& o) {
  arkv::RunConfig cfg = arkv::load_run_config(o.config);
  if (o.seed) {
    if (auto* s = std::get_if<arkv::SyntheticWorkload>(&cfg.workload)) s->seed = *o.seed;
  }
  if (o.budget) {
    for (auto& s : cfg.strategies) {
      if (s.kind == arkv::StrategyKind::kBase) continue;
      s.budget = *o.budget;
      s.validate();
    }
  }
  if (!o.out.empty()) cfg.report.output_dir = o.out;
  return cfg;
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const arkv::ConfigError*>(&e) || dynamic_cast<const arkv::ArgumentError*>(&e)) return 2;
  if (dynamic_cast<const arkv::TraceError*>(&e)) return 3;
  if (dynamic_cast<const arkv::ShapeError*>(&e) || dynamic_cast<const arkv::LengthError*>(&e) ||
      dynamic_cast<const arkv::WindowTooLargeError*>(&e)) {
    return 4;
  }
  if (dynamic_cast<const arkv::IntegrityError*>(&e) || dynamic_cast<const arkv::SequencingError*>(&e)) {
    return 5;
  }
  if (dynamic_cast<const arkv::NumericError*>(&e) ||
      dynamic_cast<const arkv::DegenerateDistributionError*>(&e)) {
    return 6;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KV-cache tri-state policy harness"};
  app.require_subcommand(1);

  Overrides run_opts;
  auto* run_cmd = app.add_subcommand("run", "Run the configured strategies and write reports");
  add_common(run_cmd, run_opts);

  Overrides cmp_opts;
  auto* cmp_cmd = app.add_subcommand("compare", "Run strategies paired against the base model");
  add_common(cmp_cmd, cmp_opts);

  Overrides replay_opts;
  std::string replay_trace;
  auto* replay_cmd = app.add_subcommand("replay", "Replay the policy over a recorded attention trace");
  add_common(replay_cmd, replay_opts);
  replay_cmd->add_option("-t,--trace", replay_trace, "Trace file (defaults to workload.trace)");

  std::string check_path;
  auto* check_cmd = app.add_subcommand("validate-trace", "Check an attention trace file");
  check_cmd->add_option("trace", check_path, "Trace file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*run_cmd || *cmp_cmd) {
      const bool paired = static_cast<bool>(*cmp_cmd);
      const auto cfg = configure(paired ? cmp_opts : run_opts);
      const auto outcome = arkv::run(cfg, paired);
      arkv::write_reports(outcome, cfg.report.output_dir);
      std::cout << arkv::summary_text(outcome);
      std::cout << "reports written to " << cfg.report.output_dir << "\n";
    } else if (*replay_cmd) {
      const auto cfg = configure(replay_opts);
      std::string path = replay_trace;
      if (path.empty()) {
        const auto* tw = std::get_if<arkv::TraceWorkload>(&cfg.workload);
        if (!tw) throw arkv::ConfigError("replay needs --trace or a trace workload");
        path = tw->path;
      }
      if (cfg.strategies.size() != 1) throw arkv::ConfigError("replay takes exactly one strategy");
      const auto trace = arkv::read_trace(path);
      const auto result = arkv::replay_policy(trace, cfg.strategies.front());
      arkv::write_replay_report(result, cfg.strategies.front(), cfg.report.output_dir);
      std::size_t triggered = 0;
      for (const auto& s : result.steps) triggered += s.triggered ? 1 : 0;
      std::cout << "replayed " << result.steps.size() << " records, " << triggered
                << " tailor plans; reports written to " << cfg.report.output_dir << "\n";
    } else if (*check_cmd) {
      const auto trace = arkv::read_trace(check_path);
      const auto v = arkv::validate_trace(trace);
      if (!v.ok()) {
        for (const auto& p : v.problems) std::cerr << "invalid: " << p << "\n";
        return 4;
      }
      std::cout << "ok: " << trace.records.size() << " records, " << trace.n_layers
                << " layers, " << trace.n_heads << " heads\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  }
  return 0;
}
