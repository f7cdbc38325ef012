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

#include "arkv/tailor.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "arkv/error.hpp"
#include "arkv/hh_scoring.hpp"
#include "arkv/quant.hpp"

namespace arkv {

TailorPlan build_plan(std::span<const double> scores, std::size_t cache_length,
                      const LayerBudget& budget, double alpha, int layer_id) {
  if (budget.window < 0 || budget.original_quota < budget.window) {
    throw ConfigError("original quota cannot hold the protected window");
  }
  const auto window = static_cast<std::size_t>(budget.window);
  if (cache_length <= window) {
    throw ArgumentError("cache of " + std::to_string(cache_length) +
                        " rows is not longer than the window");
  }
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in (0, 1]");
  const std::size_t eligible = cache_length - window;
  if (scores.size() != eligible) {
    throw ShapeError("expected " + std::to_string(eligible) + " scores, got " +
                     std::to_string(scores.size()));
  }

  const auto b = static_cast<std::size_t>(std::floor(alpha * static_cast<double>(eligible)));
  const auto ranked = rank_top_b(scores, b);

  // Half-unit room left for evictable rows once the window is paid for,
  // keeping final usage strictly below the budget.
  const std::int64_t cap = budget.total.raw() - 1;
  const std::int64_t room = cap - 2 * static_cast<std::int64_t>(window);
  if (room < 0) throw ConfigError("budget cannot hold the protected window");

  const auto n_keep = static_cast<std::int64_t>(ranked.size());
  const std::int64_t n_orig = std::min({budget.original_quota - budget.window, n_keep, room / 2});
  const std::int64_t n_quant = std::min({n_keep - n_orig, budget.quant_quota, room - 2 * n_orig});

  TailorPlan plan;
  plan.layer_id = layer_id;
  plan.cache_length = cache_length;

  std::vector<std::uint8_t> state(cache_length, 2);  // 0 original, 1 quantize, 2 evict
  for (std::int64_t i = 0; i < n_orig + n_quant; ++i) {
    state[ranked[static_cast<std::size_t>(i)]] = i < n_orig ? 0 : 1;
  }
  for (std::size_t k = eligible; k < cache_length; ++k) state[k] = 0;
  for (std::size_t k = 0; k < cache_length; ++k) {
    (state[k] == 0 ? plan.originals : state[k] == 1 ? plan.quantize : plan.evict).push_back(k);
  }
  return plan;
}

void apply_plan(TriStateCache& cache, const TailorPlan& plan, kernels::Exec exec) {
  const auto slots = cache.order();
  if (plan.cache_length != slots.size()) {
    throw IntegrityError("plan built for " + std::to_string(plan.cache_length) +
                         " rows, cache holds " + std::to_string(slots.size()));
  }
  std::vector<std::uint8_t> seen(slots.size(), 0);
  const auto mark = [&](const std::vector<std::size_t>& set) {
    for (std::size_t k : set) {
      if (k >= slots.size()) throw IntegrityError("plan references an absent row");
      if (seen[k]++) throw IntegrityError("plan assigns a row twice");
    }
  };
  mark(plan.originals);
  mark(plan.quantize);
  mark(plan.evict);
  // Sizes add up and nothing repeats, so every row is covered exactly once.
  if (plan.originals.size() + plan.quantize.size() + plan.evict.size() != slots.size()) {
    throw IntegrityError("plan does not cover every cache row");
  }

  const KvShape shape = cache.shape();
  auto [originals, quantized] = cache.release();

  std::vector<TokenEntry> next_originals;
  next_originals.reserve(plan.originals.size());
  for (std::size_t k : plan.originals) {
    const Slot& s = slots[k];
    next_originals.push_back(s.state == TokenState::kOriginal
                                 ? std::move(originals[s.index])
                                 : dequantize_token(quantized[s.index], shape));
  }

  // Fresh quantizations are batched; entries already quantized move across
  // unchanged. Both lists are in position order and merged below.
  std::vector<TokenEntry> to_quantize;
  std::vector<std::size_t> fresh_rows;
  for (std::size_t k : plan.quantize) {
    if (slots[k].state == TokenState::kOriginal) {
      to_quantize.push_back(std::move(originals[slots[k].index]));
      fresh_rows.push_back(k);
    }
  }
  auto fresh = quantize_tokens(std::move(to_quantize), shape, exec);

  std::vector<QuantizedEntry> next_quantized;
  next_quantized.reserve(plan.quantize.size());
  std::size_t f = 0;
  for (std::size_t k : plan.quantize) {
    if (f < fresh_rows.size() && fresh_rows[f] == k) {
      next_quantized.push_back(std::move(fresh[f++]));
    } else {
      next_quantized.push_back(std::move(quantized[slots[k].index]));
    }
  }
  cache.replace(std::move(next_originals), std::move(next_quantized));
}

std::size_t demote_outside_window(TriStateCache& cache) {
  const auto slots = cache.order();
  const auto window = static_cast<std::size_t>(std::max<std::int64_t>(cache.budget().window, 0));
  if (slots.size() <= window) return 0;
  const std::size_t boundary = slots.size() - window;

  std::size_t n_fresh = 0;
  for (std::size_t k = 0; k < boundary; ++k) {
    if (slots[k].state == TokenState::kOriginal) ++n_fresh;
  }
  if (n_fresh == 0) return 0;

  TailorPlan plan;
  plan.layer_id = cache.layer_id();
  plan.cache_length = slots.size();
  for (std::size_t k = 0; k < boundary; ++k) plan.quantize.push_back(k);
  for (std::size_t k = boundary; k < slots.size(); ++k) plan.originals.push_back(k);
  apply_plan(cache, plan);
  return n_fresh;
}

StateCounts count_states(const TailorPlan& plan) {
  return {plan.originals.size(), plan.quantize.size(), plan.evict.size()};
}

}  // namespace arkv
