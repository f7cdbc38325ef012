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
#include <vector>

#include "arkv/kernels.hpp"
#include "arkv/kv_store.hpp"

namespace arkv {

/// Per-token symmetric int8 quantization with one scale per KV head, applied
/// to K and V independently. Throws NumericError on non-finite input.
QuantizedEntry quantize_token(const TokenEntry& entry, const KvShape& shape);

TokenEntry dequantize_token(const QuantizedEntry& entry, const KvShape& shape);

/// Quantizes many tokens at once; rows are independent and may be
/// processed in parallel.
std::vector<QuantizedEntry> quantize_tokens(std::vector<TokenEntry> entries, const KvShape& shape,
                                            kernels::Exec exec);

/// Contiguous K/V view of one layer cache in ascending position order.
/// Quantized rows are dequantized on the fly.
struct ReconstructedKv {
  std::size_t rows = 0;
  std::size_t row_size = 0;
  std::vector<float> keys;    // [rows][row_size]
  std::vector<float> values;  // [rows][row_size]
  std::vector<std::int64_t> positions;
  std::vector<TokenState> states;
};

/// Fills `out`, reusing its storage.
void reconstruct(const TriStateCache& cache, ReconstructedKv& out,
                 kernels::Exec exec = kernels::Exec::kSerial);

/// Appends the cache's newest row to a reconstruction that was current
/// before that row was appended.
void extend(const TriStateCache& cache, ReconstructedKv& out);

inline ReconstructedKv reconstruct(const TriStateCache& cache) {
  ReconstructedKv out;
  reconstruct(cache, out);
  return out;
}

}  // namespace arkv
