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

#include "arkv/weights_io.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "arkv/error.hpp"
#include "binary_io.hpp"

namespace arkv {

namespace {

constexpr std::array<char, 8> kMagic{'A', 'R', 'K', 'V', 'W', 'T', 'S', '\0'};
constexpr std::uint32_t kVersion = 1;

// W is Weights or const Weights.
template <typename W, typename Fn>
void for_each_tensor(W& w, Fn&& fn) {
  fn(w.tok_embedding);
  for (auto& l : w.layers) {
    fn(l.attn_norm);
    fn(l.wq);
    fn(l.wk);
    fn(l.wv);
    fn(l.wo);
    fn(l.mlp_norm);
    fn(l.w_gate);
    fn(l.w_up);
    fn(l.w_down);
    fn(l.sink_bias);
  }
  fn(w.final_norm);
  fn(w.lm_head);
}

}  // namespace

void save_weights(const std::filesystem::path& path, const ModelConfig& cfg, const Weights& w) {
  cfg.validate();
  w.check(cfg);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw TraceError("cannot open " + path.string() + " for writing");
  os.write(kMagic.data(), kMagic.size());
  detail::put_u32(os, kVersion);
  for (int v : {cfg.n_layers, cfg.n_query_heads, cfg.n_kv_heads, cfg.d_model, cfg.d_head,
                cfg.vocab_size, cfg.max_seq_len, cfg.ffn_dim()}) {
    detail::put_u32(os, static_cast<std::uint32_t>(v));
  }
  for_each_tensor(w, [&os](const std::vector<float>& t) { detail::put_f32s(os, t); });
  if (!os) throw TraceError("write to " + path.string() + " failed");
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw TraceError("cannot open weight file " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw TraceError(path.string() + " is not an arkv weight file");
  }
  std::uint32_t version = 0;
  if (!detail::get_u32(is, version) || version != kVersion) {
    throw TraceError("unsupported weight file version");
  }
  std::array<std::uint32_t, 8> f{};
  for (auto& v : f) {
    if (!detail::get_u32(is, v)) throw TraceError("truncated weight header");
  }
  ModelConfig cfg;
  cfg.n_layers = static_cast<int>(f[0]);
  cfg.n_query_heads = static_cast<int>(f[1]);
  cfg.n_kv_heads = static_cast<int>(f[2]);
  cfg.d_model = static_cast<int>(f[3]);
  cfg.d_head = static_cast<int>(f[4]);
  cfg.vocab_size = static_cast<int>(f[5]);
  cfg.max_seq_len = static_cast<int>(f[6]);
  cfg.d_ff = static_cast<int>(f[7]);
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ShapeError(std::string("weight header: ") + e.what());
  }

  // Shapes come from a zero-filled template of the same config.
  const auto dm = static_cast<std::size_t>(cfg.d_model);
  const auto qdim = static_cast<std::size_t>(cfg.n_query_heads * cfg.d_head);
  const auto kvdim = static_cast<std::size_t>(cfg.n_kv_heads * cfg.d_head);
  const auto ff = static_cast<std::size_t>(cfg.ffn_dim());
  const auto vocab = static_cast<std::size_t>(cfg.vocab_size);
  Weights w;
  w.tok_embedding.resize(vocab * dm);
  w.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& l : w.layers) {
    l.attn_norm.resize(dm);
    l.wq.resize(qdim * dm);
    l.wk.resize(kvdim * dm);
    l.wv.resize(kvdim * dm);
    l.wo.resize(dm * qdim);
    l.mlp_norm.resize(dm);
    l.w_gate.resize(ff * dm);
    l.w_up.resize(ff * dm);
    l.w_down.resize(dm * ff);
    l.sink_bias.resize(static_cast<std::size_t>(cfg.n_query_heads));
  }
  w.final_norm.resize(dm);
  w.lm_head.resize(vocab * dm);
  for_each_tensor(w, [&is](std::vector<float>& t) {
    if (!detail::get_f32s(is, t)) throw TraceError("truncated weight tensor data");
  });
  if (is.peek() != std::ifstream::traits_type::eof()) {
    throw ShapeError("weight file has trailing bytes");
  }
  cfg.sink_bias.clear();
  for (const auto& l : w.layers) cfg.sink_bias.push_back(l.sink_bias.front());
  return Model(cfg, std::move(w));
}

}  // namespace arkv
