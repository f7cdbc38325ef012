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
#include <optional>
#include <span>
#include <vector>

#include "arkv/model.hpp"

namespace arkv {

/// Cache state after one step, summed over layers.
struct StepRecord {
  std::int64_t step = 0;  // 0 is the prefill
  std::int64_t seq_len = 0;
  std::int64_t n_original = 0;
  std::int64_t n_quantized = 0;
  std::int64_t n_evicted = 0;
  std::int64_t max_layer_usage_half = 0;  // max over layers, half-units
  std::int64_t bytes = 0;
  int tailored_layers = 0;
  double quant_ratio_pct = 0.0;  // quantized tokens / (L * budget)
  double evict_ratio_pct = 0.0;  // evicted tokens / (L * seq_len)
};

struct Fidelity {
  double max_abs_logit_delta = 0.0;
  double mean_kl = 0.0;  // KL(base || strategy), nats, mean over steps
  double top1_agreement = 0.0;
  std::int64_t steps = 0;
};

struct Timing {
  double prefill_seconds = 0.0;
  double decode_seconds = 0.0;
  std::int64_t decode_steps = 0;

  double tokens_per_second() const {
    return decode_seconds > 0.0 ? static_cast<double>(decode_steps) / decode_seconds : 0.0;
  }
  double seconds_per_token() const {
    return decode_steps > 0 ? decode_seconds / static_cast<double>(decode_steps) : 0.0;
  }
};

struct DecodeReport {
  StrategyKind kind = StrategyKind::kBase;
  std::int64_t budget = 0;
  std::int64_t window = 0;
  std::int64_t prompt_len = 0;
  std::int64_t generated = 0;
  std::vector<double> ratios;  // per-layer rho; empty for base
  std::vector<StepRecord> steps;
  double mean_quant_ratio_pct = 0.0;  // over decode steps (prefill if none)
  double final_quant_ratio_pct = 0.0;
  double final_evict_ratio_pct = 0.0;
  std::int64_t tailor_events = 0;
  Timing timing;
  std::optional<Fidelity> fidelity;
  std::optional<double> relative_tps;
};

struct GenerateOptions {
  kernels::Exec exec = kernels::Exec::kParallel;
  /// When non-empty, these tokens are fed instead of the argmax (teacher
  /// forcing); must hold at least n_tokens entries.
  std::span<const int> forced_tokens;
  bool keep_logits = false;
};

struct Generation {
  std::vector<int> tokens;
  DecodeReport report;
  std::vector<std::vector<float>> logits;  // one per generated token when kept
};

/// Greedy decoding: prefill, then n_tokens - 1 decode steps, emitting
/// n_tokens tokens.
Generation generate(const Model& model, std::span<const int> prompt, int n_tokens,
                    const StrategyConfig& strategy, const GenerateOptions& options = {});

/// Step-wise comparison of two logit tracks of equal length.
Fidelity compare_logits(std::span<const std::vector<float>> reference,
                        std::span<const std::vector<float>> candidate);

/// KL(p || q) between the softmax distributions of two logit vectors, nats.
double softmax_kl(std::span<const float> p_logits, std::span<const float> q_logits);

int argmax(std::span<const float> logits);

/// Runs `strategy` teacher-forced on `base`'s tokens and attaches fidelity
/// and relative throughput against it. `base` must have kept its logits.
Generation paired_run(const Model& model, std::span<const int> prompt, const Generation& base,
                      const StrategyConfig& strategy, kernels::Exec exec);

}  // namespace arkv
