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
#include <span>
#include <vector>

#include "arkv/kernels.hpp"
#include "arkv/kv_store.hpp"

namespace arkv {

/// Tri-state assignment for one layer. Indices are cache rows in sequence
/// order, [0, cache_length); each set is sorted ascending.
struct TailorPlan {
  int layer_id = 0;
  std::size_t cache_length = 0;
  std::vector<std::size_t> originals;
  std::vector<std::size_t> quantize;
  std::vector<std::size_t> evict;

  bool operator==(const TailorPlan&) const = default;
};

struct StateCounts {
  std::size_t n_original = 0;
  std::size_t n_quantized = 0;
  std::size_t n_evicted = 0;
};

/// Builds the keep/split/evict plan for a cache of `cache_length` rows.
///
/// `scores` covers the evictable rows [0, K-W). The keep set is the top
/// floor(alpha*(K-W)) rows by score. The best (original_quota - W) of them
/// stay original, the next ones are quantized up to quant_quota, and the
/// window [K-W, K) is always original. Both groups are then trimmed from
/// their lowest-scored end so the resulting usage is strictly below the
/// layer budget; whatever is left over is evicted.
TailorPlan build_plan(std::span<const double> scores, std::size_t cache_length,
                      const LayerBudget& budget, double alpha, int layer_id = 0);

/// Applies a plan. Original rows in `quantize` are quantized; quantized rows
/// in `originals` are promoted back to full precision from their dequantized
/// values; evicted rows are dropped. Throws IntegrityError when the plan does
/// not partition the current cache rows.
void apply_plan(TriStateCache& cache, const TailorPlan& plan,
                kernels::Exec exec = kernels::Exec::kSerial);

/// Quantizes every full-precision row outside the protected window.
/// Returns the number of rows converted.
std::size_t demote_outside_window(TriStateCache& cache);

StateCounts count_states(const TailorPlan& plan);

}  // namespace arkv
