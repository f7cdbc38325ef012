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

#include "arkv/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <utility>

#include "arkv/error.hpp"

namespace arkv {

namespace {

constexpr float kNormEps = 1e-5f;
constexpr double kRopeBase = 10000.0;

void rms_norm(std::span<const float> x, std::span<const float> w, std::span<float> out) {
  double ss = 0.0;
  for (float v : x) ss += static_cast<double>(v) * v;
  const auto inv = static_cast<float>(1.0 / std::sqrt(ss / static_cast<double>(x.size()) + kNormEps));
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * w[i];
}

// Rotates consecutive (even, odd) pairs of every head by position-dependent angles.
void apply_rope(std::span<float> x, int n_heads, int d_head, std::int64_t position) {
  const int half = d_head / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(kRopeBase, -2.0 * i / static_cast<double>(d_head));
    const double angle = static_cast<double>(position) * freq;
    const auto c = static_cast<float>(std::cos(angle));
    const auto s = static_cast<float>(std::sin(angle));
    for (int h = 0; h < n_heads; ++h) {
      float* p = x.data() + static_cast<std::size_t>(h) * d_head + 2 * i;
      const float a = p[0];
      const float b = p[1];
      p[0] = a * c - b * s;
      p[1] = a * s + b * c;
    }
  }
}

void check_size(const std::vector<float>& t, std::size_t n, const char* name) {
  if (t.size() != n) {
    throw ShapeError(std::string("tensor ") + name + " has " + std::to_string(t.size()) +
                     " elements, expected " + std::to_string(n));
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers <= 0 || n_query_heads <= 0 || n_kv_heads <= 0 || d_head <= 0 || d_model <= 0 ||
      vocab_size <= 0 || max_seq_len <= 0 || d_ff < 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (n_query_heads % n_kv_heads != 0) {
    throw ConfigError("n_query_heads must be divisible by n_kv_heads");
  }
  if (d_model != n_query_heads * d_head) {
    throw ConfigError("d_model must equal n_query_heads * d_head");
  }
  if (d_head % 2 != 0) throw ConfigError("d_head must be even for rotary encoding");
  if (!(attn_gain > 0.0f)) throw ConfigError("attn_gain must be positive");
  if (!sink_bias.empty() && sink_bias.size() != static_cast<std::size_t>(n_layers)) {
    throw ConfigError("sink_bias needs one value per layer");
  }
  for (float b : sink_bias) {
    if (!std::isfinite(b)) throw ConfigError("sink_bias must be finite");
  }
}

std::string_view to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::kBase: return "base";
    case StrategyKind::kOriginOnly: return "origin_only";
    case StrategyKind::kQuantOnly: return "quant_only";
    case StrategyKind::kArkv: return "arkv";
  }
  return "unknown";
}

StrategyKind parse_strategy_kind(std::string_view name) {
  if (name == "base") return StrategyKind::kBase;
  if (name == "origin_only") return StrategyKind::kOriginOnly;
  if (name == "quant_only") return StrategyKind::kQuantOnly;
  if (name == "arkv") return StrategyKind::kArkv;
  throw ConfigError("unknown strategy kind '" + std::string(name) + "'");
}

void StrategyConfig::validate() const {
  oq.validate();
  if (window < 1) throw ConfigError("window must be at least one token");
  if (kind != StrategyKind::kBase && budget <= window) {
    throw ConfigError("budget " + std::to_string(budget) + " must exceed window " +
                      std::to_string(window));
  }
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be non-negative");
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("beta must lie in [0, 1)");
}

Weights Weights::random(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.rng_seed);
  const auto fill = [&rng](std::size_t n, float stddev) {
    std::normal_distribution<float> dist(0.0f, stddev);
    std::vector<float> t(n);
    for (float& v : t) v = dist(rng);
    return t;
  };
  const auto dm = static_cast<std::size_t>(cfg.d_model);
  const auto qdim = static_cast<std::size_t>(cfg.n_query_heads * cfg.d_head);
  const auto kvdim = static_cast<std::size_t>(cfg.n_kv_heads * cfg.d_head);
  const auto ff = static_cast<std::size_t>(cfg.ffn_dim());
  const auto vocab = static_cast<std::size_t>(cfg.vocab_size);
  const float in_std = 1.0f / std::sqrt(static_cast<float>(dm));

  Weights w;
  w.tok_embedding = fill(vocab * dm, 1.0f);
  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerWeights lw;
    lw.attn_norm.assign(dm, 1.0f);
    lw.wq = fill(qdim * dm, cfg.attn_gain * in_std);
    lw.wk = fill(kvdim * dm, cfg.attn_gain * in_std);
    lw.wv = fill(kvdim * dm, in_std);
    lw.wo = fill(dm * qdim, 1.0f / std::sqrt(static_cast<float>(qdim)));
    lw.mlp_norm.assign(dm, 1.0f);
    lw.w_gate = fill(ff * dm, in_std);
    lw.w_up = fill(ff * dm, in_std);
    lw.w_down = fill(dm * ff, 1.0f / std::sqrt(static_cast<float>(ff)));
    lw.sink_bias.assign(static_cast<std::size_t>(cfg.n_query_heads),
                        cfg.sink_bias.empty() ? 0.0f : cfg.sink_bias[static_cast<std::size_t>(l)]);
    w.layers.push_back(std::move(lw));
  }
  w.final_norm.assign(dm, 1.0f);
  w.lm_head = fill(vocab * dm, in_std);
  return w;
}

void Weights::check(const ModelConfig& cfg) const {
  const auto dm = static_cast<std::size_t>(cfg.d_model);
  const auto qdim = static_cast<std::size_t>(cfg.n_query_heads * cfg.d_head);
  const auto kvdim = static_cast<std::size_t>(cfg.n_kv_heads * cfg.d_head);
  const auto ff = static_cast<std::size_t>(cfg.ffn_dim());
  const auto vocab = static_cast<std::size_t>(cfg.vocab_size);
  check_size(tok_embedding, vocab * dm, "tok_embedding");
  if (layers.size() != static_cast<std::size_t>(cfg.n_layers)) {
    throw ShapeError("weights carry " + std::to_string(layers.size()) + " layers, expected " +
                     std::to_string(cfg.n_layers));
  }
  for (const auto& l : layers) {
    check_size(l.attn_norm, dm, "attn_norm");
    check_size(l.wq, qdim * dm, "wq");
    check_size(l.wk, kvdim * dm, "wk");
    check_size(l.wv, kvdim * dm, "wv");
    check_size(l.wo, dm * qdim, "wo");
    check_size(l.mlp_norm, dm, "mlp_norm");
    check_size(l.w_gate, ff * dm, "w_gate");
    check_size(l.w_up, ff * dm, "w_up");
    check_size(l.w_down, dm * ff, "w_down");
    check_size(l.sink_bias, static_cast<std::size_t>(cfg.n_query_heads), "sink_bias");
  }
  check_size(final_norm, dm, "final_norm");
  check_size(lm_head, vocab * dm, "lm_head");
}

Model::Model(ModelConfig cfg) : cfg_(cfg), weights_(Weights::random(cfg)) {}

Model::Model(ModelConfig cfg, Weights weights) : cfg_(cfg), weights_(std::move(weights)) {
  cfg_.validate();
  weights_.check(cfg_);
}

Session::Session(const Model& model, StrategyConfig strategy, kernels::Exec exec)
    : model_(&model),
      strategy_(std::move(strategy)),
      exec_(exec),
      groups_(GroupMap::contiguous(model.config().n_query_heads, model.config().n_kv_heads)) {
  strategy_.validate();
  const ModelConfig& cfg = model.config();
  const auto layers = static_cast<std::size_t>(cfg.n_layers);
  for (std::size_t l = 0; l < layers; ++l) {
    caches_.emplace_back(static_cast<int>(l), cfg.kv_shape(),
                         LayerBudget::unlimited(strategy_.window));
    smoothers_.emplace_back(strategy_.beta);
  }
  rows_.resize(layers);
  kv_.resize(layers);
  kv_current_.assign(layers, false);
  tailored_.assign(layers, false);
  row_capacity_ = static_cast<std::size_t>(std::max<std::int64_t>(strategy_.window, strategy_.oq.window));

  const auto dm = static_cast<std::size_t>(cfg.d_model);
  const auto qdim = static_cast<std::size_t>(cfg.n_query_heads * cfg.d_head);
  const auto kvdim = static_cast<std::size_t>(cfg.n_kv_heads * cfg.d_head);
  const auto ff = static_cast<std::size_t>(cfg.ffn_dim());
  x_.resize(dm);
  h_.resize(dm);
  q_.resize(qdim);
  k_.resize(kvdim);
  v_.resize(kvdim);
  attn_.resize(qdim);
  proj_.resize(dm);
  gate_.resize(ff);
  up_.resize(ff);
  down_.resize(dm);
}

StepResult Session::prefill(std::span<const int> prompt) {
  if (prefilled_) throw SequencingError("prefill may run only once per session");
  const ModelConfig& cfg = model_->config();
  if (prompt.empty()) throw ArgumentError("prompt is empty");
  if (static_cast<std::int64_t>(prompt.size()) > cfg.max_seq_len) {
    throw LengthError("prompt of " + std::to_string(prompt.size()) + " tokens exceeds max_seq_len " +
                      std::to_string(cfg.max_seq_len));
  }
  prefilled_ = true;

  std::vector<float> logits;
  for (int token : prompt) logits = forward(token, false).logits;

  build_observation_windows();
  allocate();
  std::fill(tailored_.begin(), tailored_.end(), false);
  for (std::size_t l = 0; l < caches_.size(); ++l) maintain(l);
  return collect(std::move(logits), tailored_);
}

StepResult Session::decode_step(int token) {
  if (!prefilled_) throw SequencingError("decode_step before prefill");
  std::fill(tailored_.begin(), tailored_.end(), false);
  auto step = forward(token, true);
  return collect(std::move(step.logits), tailored_);
}

StepResult Session::forward(int token, bool maintain_caches) {
  const ModelConfig& cfg = model_->config();
  const Weights& w = model_->weights();
  if (token < 0 || token >= cfg.vocab_size) {
    throw ArgumentError("token id " + std::to_string(token) + " outside the vocabulary");
  }
  if (next_position_ >= cfg.max_seq_len) {
    throw LengthError("sequence reached max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  const std::int64_t pos = next_position_++;
  const auto dm = static_cast<std::size_t>(cfg.d_model);
  const auto geometry = cfg.geometry();

  std::copy_n(w.tok_embedding.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(token) * dm),
              dm, x_.begin());

  for (std::size_t l = 0; l < caches_.size(); ++l) {
    const LayerWeights& lw = w.layers[l];
    rms_norm(x_, lw.attn_norm, h_);
    kernels::matvec(exec_, lw.wq, h_, q_);
    kernels::matvec(exec_, lw.wk, h_, k_);
    kernels::matvec(exec_, lw.wv, h_, v_);
    apply_rope(q_, cfg.n_query_heads, cfg.d_head, pos);
    apply_rope(k_, cfg.n_kv_heads, cfg.d_head, pos);
    caches_[l].append(TokenEntry{pos, k_, v_});

    ReconstructedKv& kv = kv_[l];
    if (kv_current_[l]) {
      extend(caches_[l], kv);
    } else {
      reconstruct(caches_[l], kv, exec_);
      kv_current_[l] = true;
    }
    probs_.resize(static_cast<std::size_t>(cfg.n_query_heads) * kv.rows);
    kernels::attend(exec_, geometry, q_, kv.keys, kv.values, kv.positions, pos, probs_, attn_,
                    lw.sink_bias);

    auto& rows = rows_[l];
    if (rows.size() == row_capacity_) rows.pop_front();
    rows.push_back(AttnRow{kv.positions, probs_});

    kernels::matvec(exec_, lw.wo, attn_, proj_);
    for (std::size_t i = 0; i < dm; ++i) x_[i] += proj_[i];

    rms_norm(x_, lw.mlp_norm, h_);
    kernels::matvec(exec_, lw.w_gate, h_, gate_);
    kernels::matvec(exec_, lw.w_up, h_, up_);
    for (std::size_t i = 0; i < gate_.size(); ++i) {
      const float g = gate_[i];
      gate_[i] = g / (1.0f + std::exp(-g)) * up_[i];
    }
    kernels::matvec(exec_, lw.w_down, gate_, down_);
    for (std::size_t i = 0; i < dm; ++i) x_[i] += down_[i];

    if (maintain_caches) maintain(l);
  }

  rms_norm(x_, w.final_norm, h_);
  std::vector<float> logits(static_cast<std::size_t>(cfg.vocab_size));
  kernels::matvec(exec_, w.lm_head, h_, logits);
  return StepResult{std::move(logits), {}};
}

void Session::build_observation_windows() {
  const ModelConfig& cfg = model_->config();
  observation_.clear();
  const auto prompt_len = static_cast<std::int64_t>(caches_.front().size());
  // Short prompts shrink the window so at least two keys stay evictable.
  const std::int64_t w_obs = std::min<std::int64_t>(strategy_.oq.window, prompt_len - 2);
  for (std::size_t l = 0; l < caches_.size(); ++l) {
    AttnWindow win;
    win.layer_id = static_cast<int>(l);
    if (w_obs < 1) {
      observation_.push_back(std::move(win));
      continue;
    }
    const auto n_keys = static_cast<int>(prompt_len - w_obs);
    win.weights = AttnTensor(cfg.n_query_heads, static_cast<int>(w_obs), n_keys);
    const auto& rows = rows_[l];
    const std::size_t first = rows.size() - static_cast<std::size_t>(w_obs);
    for (int q = 0; q < w_obs; ++q) {
      const AttnRow& row = rows[first + static_cast<std::size_t>(q)];
      const std::size_t width = row.key_positions.size();
      for (int h = 0; h < cfg.n_query_heads; ++h) {
        // Prefill keeps every key, so row index equals key position.
        const float* src = row.probs.data() + static_cast<std::size_t>(h) * width;
        std::copy_n(src, n_keys, win.weights.data.begin() +
                                     static_cast<std::ptrdiff_t>(win.weights.index(h, q, 0)));
      }
    }
    observation_.push_back(std::move(win));
  }
}

void Session::allocate() {
  const auto n_layers = static_cast<int>(caches_.size());
  switch (strategy_.kind) {
    case StrategyKind::kBase:
      return;
    case StrategyKind::kOriginOnly:
      allocation_ = OqAllocation::fixed(n_layers, 1.0, strategy_.budget, strategy_.window,
                                        strategy_.budget_formula);
      break;
    case StrategyKind::kQuantOnly:
      allocation_ = OqAllocation::fixed(n_layers, 0.0, strategy_.budget, strategy_.window,
                                        strategy_.budget_formula);
      break;
    case StrategyKind::kArkv:
      allocation_ = OqAllocation::from_windows(observation_, strategy_.oq, strategy_.budget,
                                               strategy_.window, strategy_.budget_formula);
      break;
  }
  for (std::size_t l = 0; l < caches_.size(); ++l) {
    caches_[l].set_budget(allocation_->budgets()[l]);
  }
}

void Session::maintain(std::size_t layer) {
  if (strategy_.kind == StrategyKind::kBase) return;
  TriStateCache& cache = caches_[layer];
  if (strategy_.kind == StrategyKind::kQuantOnly && demote_outside_window(cache) > 0) {
    kv_current_[layer] = false;
  }
  if (cache.needs_tailor()) {
    tailor(layer);
    tailored_[layer] = true;
    kv_current_[layer] = false;
  }
  if (cache.usage().equivalents > cache.budget().total) {
    throw IntegrityError("layer " + std::to_string(layer) + " exceeds its budget after tailoring");
  }
}

void Session::tailor(std::size_t layer) {
  TriStateCache& cache = caches_[layer];
  const auto positions = cache.positions();
  const std::size_t eligible = positions.size() - static_cast<std::size_t>(cache.budget().window);
  const std::span<const std::int64_t> eligible_positions(positions.data(), eligible);

  const AttnWindow window = score_window(layer, eligible_positions);
  HhScoreVector scores = hh_scores(window, strategy_.gamma, groups_);
  smoothers_[layer].apply(eligible_positions, scores.scores);

  const TailorPlan plan = build_plan(scores.scores, positions.size(), cache.budget(),
                                     strategy_.alpha, static_cast<int>(layer));
  if (observer_) observer_(plan, scores.scores);
  apply_plan(cache, plan, exec_);
  if (cache.needs_tailor()) {
    throw IntegrityError("layer " + std::to_string(layer) + " still over budget after tailor");
  }
}

AttnWindow Session::score_window(std::size_t layer, std::span<const std::int64_t> eligible) const {
  const int heads = model_->config().n_query_heads;
  const auto& rows = rows_[layer];
  const std::size_t n_rows =
      std::min(rows.size(), static_cast<std::size_t>(caches_[layer].budget().window));
  AttnWindow win;
  win.layer_id = static_cast<int>(layer);
  win.weights = AttnTensor(heads, static_cast<int>(n_rows), static_cast<int>(eligible.size()));
  const std::size_t first = rows.size() - n_rows;
  for (std::size_t q = 0; q < n_rows; ++q) {
    const AttnRow& row = rows[first + q];
    const std::size_t width = row.key_positions.size();
    // Both position lists are ascending; every evictable key was present
    // when this query ran because caches only ever shrink below the frontier.
    std::size_t j = 0;
    for (std::size_t k = 0; k < eligible.size(); ++k) {
      while (j < width && row.key_positions[j] < eligible[k]) ++j;
      if (j == width || row.key_positions[j] != eligible[k]) {
        throw IntegrityError("cached key position " + std::to_string(eligible[k]) +
                             " missing from a recorded attention row");
      }
      for (int h = 0; h < heads; ++h) {
        win.weights.at(h, static_cast<int>(q), static_cast<int>(k)) =
            row.probs[static_cast<std::size_t>(h) * width + j];
      }
    }
  }
  return win;
}

StepResult Session::collect(std::vector<float> logits, const std::vector<bool>& tailored) const {
  StepResult out;
  out.logits = std::move(logits);
  out.layers.reserve(caches_.size());
  for (std::size_t l = 0; l < caches_.size(); ++l) {
    const TriStateCache& c = caches_[l];
    const Usage u = c.usage();
    out.layers.push_back(LayerStepStats{static_cast<std::int64_t>(c.n_original()),
                                        static_cast<std::int64_t>(c.n_quantized()),
                                        c.n_evicted(), u.equivalents, u.bytes, tailored[l]});
  }
  return out;
}

}  // namespace arkv
