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

#include "arkv/quant.hpp"

#include <algorithm>
#include <cstring>
#include <span>

#include "arkv/error.hpp"

namespace arkv {

namespace {

void check_shape(const TokenEntry& e, const KvShape& shape) {
  if (e.key.size() != shape.row_size() || e.value.size() != shape.row_size()) {
    throw ShapeError("token entry does not match the KV shape");
  }
}

}  // namespace

QuantizedEntry quantize_token(const TokenEntry& entry, const KvShape& shape) {
  check_shape(entry, shape);
  const auto heads = static_cast<std::size_t>(shape.n_kv_heads);
  QuantizedEntry q;
  q.position = entry.position;
  q.key_codes.resize(shape.row_size());
  q.value_codes.resize(shape.row_size());
  q.key_absmax.resize(heads);
  q.value_absmax.resize(heads);
  kernels::serial::quantize_rows(shape.n_kv_heads, shape.d_head, entry.key, q.key_codes,
                                 q.key_absmax);
  kernels::serial::quantize_rows(shape.n_kv_heads, shape.d_head, entry.value, q.value_codes,
                                 q.value_absmax);
  return q;
}

TokenEntry dequantize_token(const QuantizedEntry& entry, const KvShape& shape) {
  TokenEntry t;
  t.position = entry.position;
  t.key.resize(shape.row_size());
  t.value.resize(shape.row_size());
  kernels::serial::dequantize_rows(shape.n_kv_heads, shape.d_head, entry.key_codes,
                                   entry.key_absmax, t.key);
  kernels::serial::dequantize_rows(shape.n_kv_heads, shape.d_head, entry.value_codes,
                                   entry.value_absmax, t.value);
  return t;
}

std::vector<QuantizedEntry> quantize_tokens(std::vector<TokenEntry> entries, const KvShape& shape,
                                            kernels::Exec exec) {
  const std::size_t row = shape.row_size();
  const auto heads = static_cast<std::size_t>(shape.n_kv_heads);
  const std::size_t n = entries.size();

  std::vector<float> x(2 * n * row);
  for (std::size_t i = 0; i < n; ++i) {
    check_shape(entries[i], shape);
    std::copy(entries[i].key.begin(), entries[i].key.end(), x.begin() + (2 * i) * row);
    std::copy(entries[i].value.begin(), entries[i].value.end(), x.begin() + (2 * i + 1) * row);
  }
  std::vector<std::int8_t> codes(x.size());
  std::vector<float> absmax(2 * n * heads);
  kernels::quantize_rows(exec, shape.n_kv_heads, shape.d_head, x, codes, absmax);

  std::vector<QuantizedEntry> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& q = out[i];
    q.position = entries[i].position;
    const auto kc = codes.begin() + static_cast<std::ptrdiff_t>(2 * i * row);
    const auto vc = kc + static_cast<std::ptrdiff_t>(row);
    q.key_codes.assign(kc, vc);
    q.value_codes.assign(vc, vc + static_cast<std::ptrdiff_t>(row));
    const auto ks = absmax.begin() + static_cast<std::ptrdiff_t>(2 * i * heads);
    const auto vs = ks + static_cast<std::ptrdiff_t>(heads);
    q.key_absmax.assign(ks, vs);
    q.value_absmax.assign(vs, vs + static_cast<std::ptrdiff_t>(heads));
  }
  return out;
}

void reconstruct(const TriStateCache& cache, ReconstructedKv& out, kernels::Exec exec) {
  const KvShape& shape = cache.shape();
  const std::size_t row = shape.row_size();
  const auto heads = static_cast<std::size_t>(shape.n_kv_heads);
  const auto originals = cache.originals();
  const auto quantized = cache.quantized();

  out.rows = cache.size();
  out.row_size = row;
  out.keys.resize(out.rows * row);
  out.values.resize(out.rows * row);
  out.positions.resize(out.rows);
  out.states.resize(out.rows);

  // Gather quantized codes contiguously, dequantize in one batch, then
  // scatter both stores into sequence order.
  const std::size_t nq = quantized.size();
  std::vector<std::int8_t> codes(2 * nq * row);
  std::vector<float> absmax(2 * nq * heads);
  for (std::size_t j = 0; j < nq; ++j) {
    std::memcpy(codes.data() + 2 * j * row, quantized[j].key_codes.data(), row);
    std::memcpy(codes.data() + (2 * j + 1) * row, quantized[j].value_codes.data(), row);
    std::copy(quantized[j].key_absmax.begin(), quantized[j].key_absmax.end(),
              absmax.begin() + static_cast<std::ptrdiff_t>(2 * j * heads));
    std::copy(quantized[j].value_absmax.begin(), quantized[j].value_absmax.end(),
              absmax.begin() + static_cast<std::ptrdiff_t>((2 * j + 1) * heads));
  }
  std::vector<float> dequant(codes.size());
  kernels::dequantize_rows(exec, shape.n_kv_heads, shape.d_head, codes, absmax, dequant);

  std::size_t i = 0;
  std::size_t j = 0;
  for (std::size_t r = 0; r < out.rows; ++r) {
    float* k_dst = out.keys.data() + r * row;
    float* v_dst = out.values.data() + r * row;
    const bool take_original =
        j == nq || (i < originals.size() && originals[i].position < quantized[j].position);
    if (take_original) {
      std::memcpy(k_dst, originals[i].key.data(), row * sizeof(float));
      std::memcpy(v_dst, originals[i].value.data(), row * sizeof(float));
      out.positions[r] = originals[i].position;
      out.states[r] = TokenState::kOriginal;
      ++i;
    } else {
      std::memcpy(k_dst, dequant.data() + 2 * j * row, row * sizeof(float));
      std::memcpy(v_dst, dequant.data() + (2 * j + 1) * row, row * sizeof(float));
      out.positions[r] = quantized[j].position;
      out.states[r] = TokenState::kQuantized;
      ++j;
    }
  }
}

void extend(const TriStateCache& cache, ReconstructedKv& out) {
  if (cache.size() != out.rows + 1 || cache.n_original() == 0 ||
      cache.shape().row_size() != out.row_size) {
    throw IntegrityError("reconstruction is not one append behind the cache");
  }
  const TokenEntry& e = cache.originals().back();
  if (!out.positions.empty() && e.position <= out.positions.back()) {
    throw IntegrityError("newest cache row is not the latest position");
  }
  out.keys.insert(out.keys.end(), e.key.begin(), e.key.end());
  out.values.insert(out.values.end(), e.value.begin(), e.value.end());
  out.positions.push_back(e.position);
  out.states.push_back(TokenState::kOriginal);
  ++out.rows;
}

}  // namespace arkv
