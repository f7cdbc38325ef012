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
#include <random>
#include <vector>

#include "arkv/kv_store.hpp"

namespace arkv::testing {

inline TokenEntry random_entry(std::int64_t position, const KvShape& shape, std::mt19937_64& rng,
                               float spread = 1.0f) {
  std::normal_distribution<float> dist(0.0f, spread);
  TokenEntry e;
  e.position = position;
  e.key.resize(shape.row_size());
  e.value.resize(shape.row_size());
  for (auto& v : e.key) v = dist(rng);
  for (auto& v : e.value) v = dist(rng);
  return e;
}

inline LayerBudget budget_of(std::int64_t total_tokens, std::int64_t original, std::int64_t quant,
                             std::int64_t window) {
  LayerBudget b;
  b.total = HalfUnits::from_tokens(total_tokens);
  b.original_quota = original;
  b.quant_quota = quant;
  b.window = window;
  return b;
}

inline std::vector<std::size_t> iota_range(std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> out;
  for (std::size_t i = lo; i < hi; ++i) out.push_back(i);
  return out;
}

}  // namespace arkv::testing
