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
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "arkv/attn_stats.hpp"
#include "arkv/hh_scoring.hpp"
#include "arkv/kernels.hpp"
#include "arkv/kv_store.hpp"
#include "arkv/quant.hpp"
#include "arkv/tailor.hpp"

namespace arkv {

struct ModelConfig {
  int n_layers = 4;
  int n_query_heads = 4;
  int n_kv_heads = 2;
  int d_model = 64;
  int d_head = 16;
  int vocab_size = 256;
  int max_seq_len = 8192;
  std::uint64_t rng_seed = 1;
  int d_ff = 0;            // 0 selects 4 * d_model
  float attn_gain = 1.0f;  // init scale on W_q and W_k; larger gives peakier attention
  // Per-layer logit bonus on the position-0 key, emulating the attention
  // sinks of trained models. Empty means none.
  std::vector<float> sink_bias;

  void validate() const;
  int ffn_dim() const { return d_ff > 0 ? d_ff : 4 * d_model; }
  KvShape kv_shape() const { return {n_kv_heads, d_head}; }
  kernels::AttentionGeometry geometry() const { return {n_query_heads, n_kv_heads, d_head}; }
  bool operator==(const ModelConfig&) const = default;
};

enum class StrategyKind { kBase, kOriginOnly, kQuantOnly, kArkv };

std::string_view to_string(StrategyKind kind);
/// Accepts "base", "origin_only", "quant_only", "arkv".
StrategyKind parse_strategy_kind(std::string_view name);

struct StrategyConfig {
  StrategyKind kind = StrategyKind::kArkv;
  std::int64_t budget = 512;  // token-equivalents per layer
  std::int64_t window = 32;
  OqConfig oq;
  double gamma = 263.81;
  double alpha = 0.75;
  double beta = 0.0;  // score smoothing, 0 = off
  BudgetFormula budget_formula = BudgetFormula::kWindowReserved;

  void validate() const;
};

struct LayerWeights {
  std::vector<float> attn_norm;  // [d_model]
  std::vector<float> wq;         // [H*d_head][d_model]
  std::vector<float> wk;         // [G*d_head][d_model]
  std::vector<float> wv;         // [G*d_head][d_model]
  std::vector<float> wo;         // [d_model][H*d_head]
  std::vector<float> mlp_norm;   // [d_model]
  std::vector<float> w_gate;     // [d_ff][d_model]
  std::vector<float> w_up;       // [d_ff][d_model]
  std::vector<float> w_down;     // [d_model][d_ff]
  std::vector<float> sink_bias;  // [H], logit bonus on the position-0 key
};

struct Weights {
  std::vector<float> tok_embedding;  // [vocab][d_model]
  std::vector<LayerWeights> layers;
  std::vector<float> final_norm;  // [d_model]
  std::vector<float> lm_head;     // [vocab][d_model]

  /// Seeded scaled-normal initialisation; identical seeds give identical weights.
  static Weights random(const ModelConfig& cfg);

  /// Throws ShapeError if any tensor size disagrees with `cfg`.
  void check(const ModelConfig& cfg) const;
};

class Model {
 public:
  explicit Model(ModelConfig cfg);
  Model(ModelConfig cfg, Weights weights);

  const ModelConfig& config() const { return cfg_; }
  const Weights& weights() const { return weights_; }

 private:
  ModelConfig cfg_;
  Weights weights_;
};

struct LayerStepStats {
  std::int64_t n_original = 0;
  std::int64_t n_quantized = 0;
  std::int64_t n_evicted = 0;
  HalfUnits usage;
  std::int64_t bytes = 0;
  bool tailored = false;
};

struct StepResult {
  std::vector<float> logits;
  std::vector<LayerStepStats> layers;
};

/// Called once per tailor with the plan and the (smoothed) scores it used.
using PlanObserver = std::function<void(const TailorPlan&, std::span<const double>)>;

/// One generation's mutable state: per-layer caches, the attention rows of
/// the most recent queries, and the frozen OQ allocation.
class Session {
 public:
  Session(const Model& model, StrategyConfig strategy,
          kernels::Exec exec = kernels::Exec::kParallel);

  /// Runs the prompt, fixes per-layer budgets, tailors if the prompt
  /// already exceeds them. Throws LengthError past max_seq_len and
  /// SequencingError if called twice.
  StepResult prefill(std::span<const int> prompt);

  StepResult decode_step(int token);

  std::span<const TriStateCache> caches() const { return caches_; }
  const StrategyConfig& strategy() const { return strategy_; }
  /// Empty for the base strategy and before prefill.
  const std::optional<OqAllocation>& allocation() const { return allocation_; }
  /// Observation windows captured during prefill, one per layer.
  std::span<const AttnWindow> observation_windows() const { return observation_; }
  std::int64_t next_position() const { return next_position_; }

  void set_plan_observer(PlanObserver observer) { observer_ = std::move(observer); }

 private:
  struct AttnRow {
    std::vector<std::int64_t> key_positions;
    std::vector<float> probs;  // [H][key_positions.size()]
  };

  StepResult forward(int token, bool maintain);
  void maintain(std::size_t layer);
  void tailor(std::size_t layer);
  AttnWindow score_window(std::size_t layer, std::span<const std::int64_t> eligible) const;
  void build_observation_windows();
  void allocate();
  StepResult collect(std::vector<float> logits, const std::vector<bool>& tailored) const;

  const Model* model_;
  StrategyConfig strategy_;
  kernels::Exec exec_;
  GroupMap groups_;
  std::vector<TriStateCache> caches_;
  std::vector<std::deque<AttnRow>> rows_;
  std::vector<ScoreSmoother> smoothers_;
  std::optional<OqAllocation> allocation_;
  std::vector<AttnWindow> observation_;
  std::vector<bool> tailored_;
  std::size_t row_capacity_;
  std::int64_t next_position_ = 0;
  bool prefilled_ = false;
  PlanObserver observer_;

  // Scratch reused across steps.
  // Per-layer float view of the cache. Extended in place while only appends
  // happen; rebuilt after anything rewrites the cache.
  std::vector<ReconstructedKv> kv_;
  std::vector<bool> kv_current_;
  std::vector<float> x_, h_, q_, k_, v_, attn_, probs_, proj_, gate_, up_, down_;
};

}  // namespace arkv
