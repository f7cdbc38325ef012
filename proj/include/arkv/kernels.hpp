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
#include <span>

namespace arkv::kernels {

/// Execution policy for the data-parallel kernels. Both paths perform the
/// same floating-point operations in the same order per output element, so
/// their results are bitwise identical.
enum class Exec { kSerial, kParallel };

struct AttentionGeometry {
  int n_heads = 1;     // query heads H
  int n_kv_heads = 1;  // KV heads G, H % G == 0
  int d_head = 1;

  int group_size() const { return n_heads / n_kv_heads; }
};

/// Step between adjacent codes for a head with the given max|x|: absmax/127,
/// or 1 for an all-zero vector. Kept in double so 127 * step rounds back to
/// absmax exactly.
inline double quant_step(float absmax) {
  return absmax == 0.0f ? 1.0 : static_cast<double>(absmax) / 127.0;
}

/// Symmetric 8-bit quantization of one head vector. Returns max|x|; codes are
/// round-to-nearest-even of x/quant_step(max|x|) clamped to [-127, 127].
float quantize_head(std::span<const float> x, std::span<std::int8_t> codes);

namespace serial {

// y = W x, W row-major [y.size()][x.size()]
void matvec(std::span<const float> w, std::span<const float> x, std::span<float> y);

// Single-query causal attention. keys/values: [rows][n_kv_heads*d_head] in
// ascending position order; rows with position > query_position are masked.
// probs: [n_heads][rows] post-softmax; out: [n_heads][d_head]. sink_bias, if
// non-empty, holds one logit bonus per head for the key at position 0.
void attend(const AttentionGeometry& g, std::span<const float> query,
            std::span<const float> keys, std::span<const float> values,
            std::span<const std::int64_t> key_positions, std::int64_t query_position,
            std::span<float> probs, std::span<float> out, std::span<const float> sink_bias = {});

// codes: [rows][n_kv_heads*d_head], absmax: [rows][n_kv_heads]
void dequantize_rows(int n_kv_heads, int d_head, std::span<const std::int8_t> codes,
                     std::span<const float> absmax, std::span<float> out);

void quantize_rows(int n_kv_heads, int d_head, std::span<const float> x,
                   std::span<std::int8_t> codes, std::span<float> absmax);

}  // namespace serial

namespace omp {

void matvec(std::span<const float> w, std::span<const float> x, std::span<float> y);
void attend(const AttentionGeometry& g, std::span<const float> query,
            std::span<const float> keys, std::span<const float> values,
            std::span<const std::int64_t> key_positions, std::int64_t query_position,
            std::span<float> probs, std::span<float> out, std::span<const float> sink_bias = {});
void dequantize_rows(int n_kv_heads, int d_head, std::span<const std::int8_t> codes,
                     std::span<const float> absmax, std::span<float> out);
void quantize_rows(int n_kv_heads, int d_head, std::span<const float> x,
                   std::span<std::int8_t> codes, std::span<float> absmax);

}  // namespace omp

inline void matvec(Exec e, std::span<const float> w, std::span<const float> x,
                   std::span<float> y) {
  e == Exec::kParallel ? omp::matvec(w, x, y) : serial::matvec(w, x, y);
}

inline void attend(Exec e, const AttentionGeometry& g, std::span<const float> query,
                   std::span<const float> keys, std::span<const float> values,
                   std::span<const std::int64_t> key_positions, std::int64_t query_position,
                   std::span<float> probs, std::span<float> out,
                   std::span<const float> sink_bias = {}) {
  if (e == Exec::kParallel) {
    omp::attend(g, query, keys, values, key_positions, query_position, probs, out, sink_bias);
  } else {
    serial::attend(g, query, keys, values, key_positions, query_position, probs, out, sink_bias);
  }
}

inline void dequantize_rows(Exec e, int n_kv_heads, int d_head, std::span<const std::int8_t> codes,
                            std::span<const float> absmax, std::span<float> out) {
  if (e == Exec::kParallel) {
    omp::dequantize_rows(n_kv_heads, d_head, codes, absmax, out);
  } else {
    serial::dequantize_rows(n_kv_heads, d_head, codes, absmax, out);
  }
}

inline void quantize_rows(Exec e, int n_kv_heads, int d_head, std::span<const float> x,
                          std::span<std::int8_t> codes, std::span<float> absmax) {
  if (e == Exec::kParallel) {
    omp::quantize_rows(n_kv_heads, d_head, x, codes, absmax);
  } else {
    serial::quantize_rows(n_kv_heads, d_head, x, codes, absmax);
  }
}

}  // namespace arkv::kernels
