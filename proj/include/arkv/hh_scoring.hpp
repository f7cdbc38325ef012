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

#include <cstddef>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "arkv/attn_stats.hpp"

namespace arkv {

/// Assignment of query heads to KV groups.
struct GroupMap {
  std::vector<int> group_of_head;
  int n_groups = 0;

  /// Contiguous blocks of H/G heads per KV head, the usual GQA layout.
  static GroupMap contiguous(int n_heads, int n_kv_heads);
  /// All heads in one group.
  static GroupMap single(int n_heads) { return contiguous(n_heads, 1); }

  int n_heads() const { return static_cast<int>(group_of_head.size()); }
  void validate() const;
};

struct HhScoreVector {
  int layer_id = 0;
  std::vector<double> scores;  // one per evictable key, in cache order
  double gamma = 0.0;
  GroupMap group_map;
};

/// S_k = mu_k + gamma * var_k with mean and population variance taken over
/// (head, query) within each KV group, then averaged across groups.
HhScoreVector hh_scores(const AttnWindow& window, double gamma, const GroupMap& groups);

/// Indices of the b highest scores, returned in ascending index order. Ties
/// go to the lower index. Throws ArgumentError if b > scores.size().
std::vector<std::size_t> top_b(std::span<const double> scores, std::size_t b);

/// Same selection as top_b but returned best-first.
std::vector<std::size_t> rank_top_b(std::span<const double> scores, std::size_t b);

/// Optional exponential smoothing of scores across tailor invocations,
/// keyed by absolute token position. beta = 0 passes scores through.
class ScoreSmoother {
 public:
  explicit ScoreSmoother(double beta = 0.0);

  double beta() const { return beta_; }

  /// Smooths `scores` in place; `positions[i]` is the token of `scores[i]`.
  /// Positions absent from `positions` are forgotten.
  void apply(std::span<const std::int64_t> positions, std::span<double> scores);

 private:
  double beta_;
  std::unordered_map<std::int64_t, double> state_;
};

}  // namespace arkv
