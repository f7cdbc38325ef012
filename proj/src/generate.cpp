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

#include "arkv/generate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include "arkv/error.hpp"

namespace arkv {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

StepRecord summarize(std::int64_t step, const StepResult& r, const Session& s) {
  StepRecord rec;
  rec.step = step;
  rec.seq_len = s.next_position();
  for (const LayerStepStats& l : r.layers) {
    rec.n_original += l.n_original;
    rec.n_quantized += l.n_quantized;
    rec.n_evicted += l.n_evicted;
    rec.max_layer_usage_half = std::max(rec.max_layer_usage_half, l.usage.raw());
    rec.bytes += l.bytes;
    rec.tailored_layers += l.tailored ? 1 : 0;
  }
  const auto layers = static_cast<double>(r.layers.size());
  if (s.strategy().kind != StrategyKind::kBase) {
    rec.quant_ratio_pct =
        100.0 * static_cast<double>(rec.n_quantized) / (layers * static_cast<double>(s.strategy().budget));
  }
  rec.evict_ratio_pct =
      100.0 * static_cast<double>(rec.n_evicted) / (layers * static_cast<double>(rec.seq_len));
  return rec;
}

std::vector<double> log_softmax(std::span<const float> logits) {
  double m = -INFINITY;
  for (float v : logits) m = std::max(m, static_cast<double>(v));
  double z = 0.0;
  for (float v : logits) z += std::exp(static_cast<double>(v) - m);
  const double lz = m + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - lz;
  return out;
}

}  // namespace

int argmax(std::span<const float> logits) {
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

double softmax_kl(std::span<const float> p_logits, std::span<const float> q_logits) {
  if (p_logits.size() != q_logits.size()) throw ShapeError("logit vectors differ in size");
  const auto lp = log_softmax(p_logits);
  const auto lq = log_softmax(q_logits);
  double kl = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
  return std::max(kl, 0.0);
}

Fidelity compare_logits(std::span<const std::vector<float>> reference,
                        std::span<const std::vector<float>> candidate) {
  if (reference.size() != candidate.size()) throw ShapeError("logit tracks differ in length");
  Fidelity f;
  f.steps = static_cast<std::int64_t>(reference.size());
  if (reference.empty()) return f;
  double kl_sum = 0.0;
  std::int64_t agree = 0;
  for (std::size_t t = 0; t < reference.size(); ++t) {
    const auto& a = reference[t];
    const auto& b = candidate[t];
    if (a.size() != b.size()) throw ShapeError("logit vectors differ in size");
    for (std::size_t i = 0; i < a.size(); ++i) {
      f.max_abs_logit_delta = std::max(f.max_abs_logit_delta, std::fabs(static_cast<double>(a[i]) - b[i]));
    }
    kl_sum += softmax_kl(a, b);
    agree += argmax(a) == argmax(b) ? 1 : 0;
  }
  f.mean_kl = kl_sum / static_cast<double>(reference.size());
  f.top1_agreement = static_cast<double>(agree) / static_cast<double>(reference.size());
  return f;
}

Generation generate(const Model& model, std::span<const int> prompt, int n_tokens,
                    const StrategyConfig& strategy, const GenerateOptions& options) {
  if (n_tokens < 0) throw ArgumentError("n_tokens must be non-negative");
  if (!options.forced_tokens.empty() &&
      options.forced_tokens.size() < static_cast<std::size_t>(n_tokens)) {
    throw ArgumentError("forced token track shorter than the generation");
  }
  Session session(model, strategy, options.exec);
  Generation gen;
  DecodeReport& rep = gen.report;
  rep.kind = strategy.kind;
  rep.budget = strategy.kind == StrategyKind::kBase ? 0 : strategy.budget;
  rep.window = strategy.window;
  rep.prompt_len = static_cast<std::int64_t>(prompt.size());

  const auto t_prefill = Clock::now();
  StepResult step = session.prefill(prompt);
  rep.timing.prefill_seconds = seconds_since(t_prefill);
  rep.steps.push_back(summarize(0, step, session));
  if (session.allocation()) {
    const auto r = session.allocation()->ratios();
    rep.ratios.assign(r.begin(), r.end());
  }

  const auto pick = [&](std::size_t i, const std::vector<float>& logits) {
    return options.forced_tokens.empty() ? argmax(logits) : options.forced_tokens[i];
  };

  double decode_seconds = 0.0;
  for (int i = 0; i < n_tokens; ++i) {
    const int token = pick(static_cast<std::size_t>(i), step.logits);
    gen.tokens.push_back(token);
    if (options.keep_logits) gen.logits.push_back(step.logits);
    if (i + 1 == n_tokens) break;
    const auto t0 = Clock::now();
    step = session.decode_step(token);
    decode_seconds += seconds_since(t0);
    rep.steps.push_back(summarize(static_cast<std::int64_t>(i) + 1, step, session));
  }
  rep.generated = n_tokens;
  rep.timing.decode_seconds = decode_seconds;
  rep.timing.decode_steps = static_cast<std::int64_t>(rep.steps.size()) - 1;

  double quant_sum = 0.0;
  for (std::size_t s = 1; s < rep.steps.size(); ++s) quant_sum += rep.steps[s].quant_ratio_pct;
  rep.mean_quant_ratio_pct = rep.steps.size() > 1
                                 ? quant_sum / static_cast<double>(rep.steps.size() - 1)
                                 : rep.steps.front().quant_ratio_pct;
  rep.final_quant_ratio_pct = rep.steps.back().quant_ratio_pct;
  rep.final_evict_ratio_pct = rep.steps.back().evict_ratio_pct;
  for (const StepRecord& s : rep.steps) rep.tailor_events += s.tailored_layers;
  return gen;
}

Generation paired_run(const Model& model, std::span<const int> prompt, const Generation& base,
                      const StrategyConfig& strategy, kernels::Exec exec) {
  if (base.logits.size() != base.tokens.size()) {
    throw ArgumentError("base run must keep its logits for pairing");
  }
  GenerateOptions opts;
  opts.exec = exec;
  opts.forced_tokens = base.tokens;
  opts.keep_logits = true;
  Generation g = generate(model, prompt, static_cast<int>(base.tokens.size()), strategy, opts);
  g.report.fidelity = compare_logits(base.logits, g.logits);
  const double base_tps = base.report.timing.tokens_per_second();
  if (base_tps > 0.0) g.report.relative_tps = g.report.timing.tokens_per_second() / base_tps;
  return g;
}

}  // namespace arkv
