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
#include <string>
#include <vector>

#include "arkv/attn_stats.hpp"
#include "arkv/model.hpp"
#include "arkv/tailor.hpp"

namespace arkv {

/// Recorded post-softmax attention, for evaluating the cache policy without
/// a model. Byte layout in docs/trace_format.md.
struct AttnTraceRecord {
  std::uint32_t layer_id = 0;
  std::uint32_t step = 0;  // step 0 is the prefill of the layer
  AttnTensor attention;    // [n_heads][queries][keys]
};

struct AttnTrace {
  std::uint32_t n_layers = 0;
  std::uint32_t n_heads = 0;
  std::uint32_t n_kv_heads = 0;
  std::uint32_t window = 0;
  std::vector<AttnTraceRecord> records;
};

void write_trace(const std::filesystem::path& path, const AttnTrace& trace);

/// Throws TraceError for unreadable, truncated or malformed files.
AttnTrace read_trace(const std::filesystem::path& path);

struct TraceValidation {
  std::vector<std::string> problems;
  bool ok() const { return problems.empty(); }
};

/// Structural and numeric checks: shapes agree with the header, weights are
/// finite and non-negative, rows are sub-stochastic within `tolerance`, and
/// every layer has a step-0 record.
TraceValidation validate_trace(const AttnTrace& trace, double tolerance = 1e-4);

struct ReplayStep {
  std::uint32_t layer_id = 0;
  std::uint32_t step = 0;
  std::size_t keys = 0;
  bool triggered = false;  // recorded cache reached the layer budget
  TailorPlan plan;         // empty unless triggered
};

struct ReplayResult {
  std::vector<double> ratios;  // per layer; empty for base
  std::vector<LayerBudget> budgets;
  std::vector<ReplayStep> steps;
};

/// Runs statistics, scoring and plan construction over recorded attention.
/// Ratios come from each layer's step-0 record; every record whose key
/// count reaches the budget yields a plan. Throws TraceError if the trace
/// is inconsistent with the strategy window.
ReplayResult replay_policy(const AttnTrace& trace, const StrategyConfig& strategy);

}  // namespace arkv
