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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

#include "arkv/error.hpp"
#include "arkv/kernels.hpp"

namespace arkv::kernels {

float quantize_head(std::span<const float> x, std::span<std::int8_t> codes) {
  float max_abs = 0.0f;
  for (float v : x) {
    if (!std::isfinite(v)) throw NumericError("cannot quantize a non-finite value");
    max_abs = std::max(max_abs, std::fabs(v));
  }
  if (max_abs == 0.0f) {
    std::fill(codes.begin(), codes.end(), std::int8_t{0});
    return 0.0f;
  }
  const double step = quant_step(max_abs);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double q = std::nearbyint(static_cast<double>(x[i]) / step);
    codes[i] = static_cast<std::int8_t>(std::clamp(q, -127.0, 127.0));
  }
  return max_abs;
}

namespace serial {

void matvec(std::span<const float> w, std::span<const float> x, std::span<float> y) {
  const std::size_t cols = x.size();
  for (std::size_t r = 0; r < y.size(); ++r) {
    const float* row = w.data() + r * cols;
    float acc = 0.0f;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

void attend(const AttentionGeometry& g, std::span<const float> query,
            std::span<const float> keys, std::span<const float> values,
            std::span<const std::int64_t> key_positions, std::int64_t query_position,
            std::span<float> probs, std::span<float> out, std::span<const float> sink_bias) {
  const std::size_t rows = key_positions.size();
  const std::size_t dh = static_cast<std::size_t>(g.d_head);
  const std::size_t stride = static_cast<std::size_t>(g.n_kv_heads) * dh;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(g.d_head));

  for (int h = 0; h < g.n_heads; ++h) {
    const std::size_t kv = static_cast<std::size_t>(h / g.group_size());
    const float* q = query.data() + static_cast<std::size_t>(h) * dh;
    float* p = probs.data() + static_cast<std::size_t>(h) * rows;
    const float bonus = sink_bias.empty() ? 0.0f : sink_bias[static_cast<std::size_t>(h)];

    float max_logit = -std::numeric_limits<float>::infinity();
    for (std::size_t k = 0; k < rows; ++k) {
      if (key_positions[k] > query_position) {
        p[k] = -std::numeric_limits<float>::infinity();
        continue;
      }
      const float* key = keys.data() + k * stride + kv * dh;
      float dot = 0.0f;
      for (std::size_t d = 0; d < dh; ++d) dot += q[d] * key[d];
      p[k] = dot * inv_sqrt;
      if (key_positions[k] == 0) p[k] += bonus;
      max_logit = std::max(max_logit, p[k]);
    }
    float denom = 0.0f;
    for (std::size_t k = 0; k < rows; ++k) {
      p[k] = key_positions[k] > query_position ? 0.0f : std::exp(p[k] - max_logit);
      denom += p[k];
    }
    for (std::size_t k = 0; k < rows; ++k) p[k] /= denom;

    float* o = out.data() + static_cast<std::size_t>(h) * dh;
    std::fill(o, o + dh, 0.0f);
    for (std::size_t k = 0; k < rows; ++k) {
      const float* v = values.data() + k * stride + kv * dh;
      for (std::size_t d = 0; d < dh; ++d) o[d] += p[k] * v[d];
    }
  }
}

void dequantize_rows(int n_kv_heads, int d_head, std::span<const std::int8_t> codes,
                     std::span<const float> absmax, std::span<float> out) {
  const std::size_t dh = static_cast<std::size_t>(d_head);
  const std::size_t heads = static_cast<std::size_t>(n_kv_heads);
  const std::size_t rows = absmax.size() / heads;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t h = 0; h < heads; ++h) {
      const double s = quant_step(absmax[r * heads + h]);
      const std::size_t base = (r * heads + h) * dh;
      for (std::size_t d = 0; d < dh; ++d) {
        out[base + d] = static_cast<float>(codes[base + d] * s);
      }
    }
  }
}

void quantize_rows(int n_kv_heads, int d_head, std::span<const float> x,
                   std::span<std::int8_t> codes, std::span<float> absmax) {
  const std::size_t dh = static_cast<std::size_t>(d_head);
  const std::size_t heads = static_cast<std::size_t>(n_kv_heads);
  const std::size_t rows = x.size() / (heads * dh);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t base = (r * heads + h) * dh;
      absmax[r * heads + h] = quantize_head(x.subspan(base, dh), codes.subspan(base, dh));
    }
  }
}

}  // namespace serial
}  // namespace arkv::kernels
