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

#include <filesystem>

#include "arkv/model.hpp"

namespace arkv {

/// Flat little-endian weight file:
///
///   magic "ARKVWTS\0" (8 bytes), u32 version = 1,
///   u32 n_layers, n_query_heads, n_kv_heads, d_model, d_head, vocab_size,
///       max_seq_len, d_ff,
///   f32 tensors, row-major, in the order
///     tok_embedding, then per layer: attn_norm, wq, wk, wv, wo, mlp_norm,
///     w_gate, w_up, w_down; then final_norm, lm_head.
///
/// See docs/weights_format.md for tensor shapes.
void save_weights(const std::filesystem::path& path, const ModelConfig& cfg, const Weights& w);

/// Reads a weight file. The returned config takes its dimensions from the
/// header; rng_seed and attn_gain are not stored and keep their defaults.
/// Throws TraceError on unreadable or truncated files and ShapeError on
/// inconsistent headers.
Model load_model(const std::filesystem::path& path);

}  // namespace arkv
