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

#include <compare>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

namespace arkv {

/// Budget accounting unit. An original token costs two half-units, a
/// quantized token one, so every budget comparison is exact integer math.
class HalfUnits {
 public:
  constexpr HalfUnits() = default;
  constexpr explicit HalfUnits(std::int64_t raw) : raw_(raw) {}

  static constexpr HalfUnits from_tokens(std::int64_t tokens) { return HalfUnits(2 * tokens); }

  constexpr std::int64_t raw() const { return raw_; }
  constexpr double tokens() const { return static_cast<double>(raw_) / 2.0; }

  constexpr HalfUnits operator+(HalfUnits o) const { return HalfUnits(raw_ + o.raw_); }
  constexpr HalfUnits operator-(HalfUnits o) const { return HalfUnits(raw_ - o.raw_); }
  constexpr HalfUnits operator*(std::int64_t n) const { return HalfUnits(raw_ * n); }
  constexpr auto operator<=>(const HalfUnits&) const = default;

 private:
  std::int64_t raw_ = 0;
};

/// Per-token K/V geometry shared by every layer of one model.
struct KvShape {
  int n_kv_heads = 1;
  int d_head = 1;

  constexpr std::size_t row_size() const {
    return static_cast<std::size_t>(n_kv_heads) * static_cast<std::size_t>(d_head);
  }
  constexpr bool operator==(const KvShape&) const = default;
};

struct TokenEntry {
  std::int64_t position = 0;
  std::vector<float> key;    // [n_kv_heads][d_head]
  std::vector<float> value;  // [n_kv_heads][d_head]
};

struct QuantizedEntry {
  std::int64_t position = 0;
  std::vector<std::int8_t> key_codes;
  std::vector<float> key_absmax;  // max|x| per KV head; scale is absmax/127
  std::vector<std::int8_t> value_codes;
  std::vector<float> value_absmax;
};

/// Per-layer quotas. Token counts are whole tokens; `total` is in half-units.
struct LayerBudget {
  HalfUnits total;
  std::int64_t original_quota = 0;  // tokens at full precision, window included
  std::int64_t quant_quota = 0;     // tokens at 8 bits
  std::int64_t window = 0;

  /// Budget that never triggers a tailor (used by the base strategy).
  static LayerBudget unlimited(std::int64_t window);

  HalfUnits quota_usage() const {
    return HalfUnits::from_tokens(original_quota) + HalfUnits(quant_quota);
  }
  bool is_unlimited() const;

  /// Throws ConfigError if quotas are negative, exceed `total`, or cannot
  /// hold the protected window.
  void validate() const;

  bool operator==(const LayerBudget&) const = default;
};

/// Cost of each token state, in token-equivalents and in logical bytes.
/// Full precision is accounted as 2 bytes/element (bfloat16); quantized as
/// 1 byte/element plus one 4-byte absmax per KV head for K and for V.
struct CostModel {
  KvShape shape;

  static constexpr HalfUnits kOriginal{2};
  static constexpr HalfUnits kQuantized{1};

  std::int64_t bytes_original() const { return 4LL * shape.d_head * shape.n_kv_heads; }
  std::int64_t bytes_quantized() const {
    return 2LL * shape.d_head * shape.n_kv_heads + 8LL * shape.n_kv_heads;
  }
  HalfUnits equivalents(std::int64_t n_original, std::int64_t n_quantized) const {
    return kOriginal * n_original + kQuantized * n_quantized;
  }
  std::int64_t bytes(std::int64_t n_original, std::int64_t n_quantized) const {
    return n_original * bytes_original() + n_quantized * bytes_quantized();
  }
};

struct Usage {
  HalfUnits equivalents;
  std::int64_t bytes = 0;
};

enum class TokenState : std::uint8_t { kOriginal, kQuantized };

/// One cache row in sequence order, pointing into the originals or the
/// quantized store.
struct Slot {
  std::int64_t position = 0;
  TokenState state = TokenState::kOriginal;
  std::size_t index = 0;
};

/// Tri-state KV cache of one layer. Originals and quantized entries are each
/// kept sorted by position; together they cover disjoint positions and the
/// highest `window` positions are always originals.
///
/// Single writer: a cache is mutated by one agent per decode step.
class TriStateCache {
 public:
  TriStateCache(int layer_id, KvShape shape, LayerBudget budget);

  /// Adds the next token at full precision. Throws SequencingError unless
  /// `entry.position` is exactly one past the highest position ever seen
  /// (0 for a fresh cache), and ShapeError on a row-size mismatch.
  void append(TokenEntry entry);

  Usage usage() const;
  bool needs_tailor() const { return usage().equivalents >= budget_.total; }

  int layer_id() const { return layer_id_; }
  const KvShape& shape() const { return shape_; }
  const CostModel& cost_model() const { return cost_; }
  const LayerBudget& budget() const { return budget_; }
  void set_budget(LayerBudget budget);

  std::size_t size() const { return originals_.size() + quantized_.size(); }
  bool empty() const { return size() == 0; }
  std::size_t n_original() const { return originals_.size(); }
  std::size_t n_quantized() const { return quantized_.size(); }

  /// Number of positions appended so far, evicted ones included.
  std::int64_t seen() const { return next_position_; }
  std::int64_t n_evicted() const { return next_position_ - static_cast<std::int64_t>(size()); }

  std::span<const TokenEntry> originals() const { return originals_; }
  std::span<const QuantizedEntry> quantized() const { return quantized_; }

  /// Rows in ascending position order.
  std::vector<Slot> order() const;
  std::vector<std::int64_t> positions() const;

  /// Replaces both stores wholesale. Used by the tailor; validates every
  /// structural invariant and throws IntegrityError on violation.
  void replace(std::vector<TokenEntry> originals, std::vector<QuantizedEntry> quantized);

  /// Moves both stores out, leaving the cache empty until replace().
  std::pair<std::vector<TokenEntry>, std::vector<QuantizedEntry>> release();

  /// Throws IntegrityError if ordering, disjointness, window protection or
  /// row geometry is violated. Budget is not checked here because usage may
  /// legitimately sit at or above the limit between append and tailor.
  void check_invariants() const;

 private:
  int layer_id_;
  KvShape shape_;
  CostModel cost_;
  LayerBudget budget_;
  std::vector<TokenEntry> originals_;
  std::vector<QuantizedEntry> quantized_;
  std::int64_t next_position_ = 0;
};

}  // namespace arkv
