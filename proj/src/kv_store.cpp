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

#include "arkv/kv_store.hpp"

#include <algorithm>
#include <string>
#include <utility>

#include "arkv/error.hpp"

namespace arkv {

namespace {

// Large enough to never trigger, small enough that quota arithmetic in
// half-units cannot overflow.
constexpr std::int64_t kUnlimitedTokens = std::int64_t{1} << 40;

}  // namespace

LayerBudget LayerBudget::unlimited(std::int64_t window) {
  LayerBudget b;
  b.total = HalfUnits::from_tokens(kUnlimitedTokens);
  b.original_quota = kUnlimitedTokens;
  b.quant_quota = 0;
  b.window = window;
  return b;
}

bool LayerBudget::is_unlimited() const {
  return total >= HalfUnits::from_tokens(kUnlimitedTokens);
}

void LayerBudget::validate() const {
  if (window < 0 || original_quota < 0 || quant_quota < 0 || total.raw() < 0) {
    throw ConfigError("layer budget has negative quantities");
  }
  if (original_quota < window) {
    throw ConfigError("original quota " + std::to_string(original_quota) +
                      " cannot hold the protected window of " + std::to_string(window));
  }
  if (quota_usage() > total) {
    throw ConfigError("original and quantized quotas exceed the layer budget");
  }
}

TriStateCache::TriStateCache(int layer_id, KvShape shape, LayerBudget budget)
    : layer_id_(layer_id), shape_(shape), cost_{shape}, budget_(budget) {
  if (shape.n_kv_heads <= 0 || shape.d_head <= 0) {
    throw ShapeError("KV shape must be positive");
  }
  budget_.validate();
}

void TriStateCache::set_budget(LayerBudget budget) {
  budget.validate();
  budget_ = budget;
}

void TriStateCache::append(TokenEntry entry) {
  if (entry.position != next_position_) {
    throw SequencingError("layer " + std::to_string(layer_id_) + ": expected position " +
                          std::to_string(next_position_) + ", got " +
                          std::to_string(entry.position));
  }
  if (entry.key.size() != shape_.row_size() || entry.value.size() != shape_.row_size()) {
    throw ShapeError("token entry row size does not match the KV shape");
  }
  originals_.push_back(std::move(entry));
  ++next_position_;
}

Usage TriStateCache::usage() const {
  const auto n_o = static_cast<std::int64_t>(originals_.size());
  const auto n_q = static_cast<std::int64_t>(quantized_.size());
  return Usage{cost_.equivalents(n_o, n_q), cost_.bytes(n_o, n_q)};
}

std::vector<Slot> TriStateCache::order() const {
  std::vector<Slot> out;
  out.reserve(size());
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < originals_.size() || j < quantized_.size()) {
    const bool take_original =
        j == quantized_.size() ||
        (i < originals_.size() && originals_[i].position < quantized_[j].position);
    if (take_original) {
      out.push_back({originals_[i].position, TokenState::kOriginal, i});
      ++i;
    } else {
      out.push_back({quantized_[j].position, TokenState::kQuantized, j});
      ++j;
    }
  }
  return out;
}

std::vector<std::int64_t> TriStateCache::positions() const {
  std::vector<std::int64_t> out;
  out.reserve(size());
  for (const Slot& s : order()) out.push_back(s.position);
  return out;
}

void TriStateCache::replace(std::vector<TokenEntry> originals,
                            std::vector<QuantizedEntry> quantized) {
  originals_ = std::move(originals);
  quantized_ = std::move(quantized);
  check_invariants();
}

std::pair<std::vector<TokenEntry>, std::vector<QuantizedEntry>> TriStateCache::release() {
  return {std::exchange(originals_, {}), std::exchange(quantized_, {})};
}

void TriStateCache::check_invariants() const {
  auto fail = [this](const std::string& what) {
    throw IntegrityError("layer " + std::to_string(layer_id_) + ": " + what);
  };
  const std::size_t row = shape_.row_size();
  const auto heads = static_cast<std::size_t>(shape_.n_kv_heads);

  for (std::size_t i = 0; i < originals_.size(); ++i) {
    const auto& e = originals_[i];
    if (e.key.size() != row || e.value.size() != row) fail("original row size mismatch");
    if (i > 0 && originals_[i - 1].position >= e.position) fail("originals out of order");
  }
  for (std::size_t i = 0; i < quantized_.size(); ++i) {
    const auto& e = quantized_[i];
    if (e.key_codes.size() != row || e.value_codes.size() != row ||
        e.key_absmax.size() != heads || e.value_absmax.size() != heads) {
      fail("quantized row size mismatch");
    }
    if (i > 0 && quantized_[i - 1].position >= e.position) fail("quantized entries out of order");
  }

  const auto slots = order();
  for (std::size_t i = 1; i < slots.size(); ++i) {
    if (slots[i - 1].position == slots[i].position) fail("position stored in two states");
  }
  if (!slots.empty() && slots.back().position >= next_position_) {
    fail("position beyond the append frontier");
  }

  const auto w = static_cast<std::size_t>(std::max<std::int64_t>(budget_.window, 0));
  const std::size_t protected_rows = std::min(w, slots.size());
  for (std::size_t i = slots.size() - protected_rows; i < slots.size(); ++i) {
    if (slots[i].state != TokenState::kOriginal) fail("protected window holds a quantized token");
  }
}

}  // namespace arkv
