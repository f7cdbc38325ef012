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

#include "arkv/trace.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <string>

#include "arkv/error.hpp"
#include "arkv/hh_scoring.hpp"
#include "binary_io.hpp"

namespace arkv {

namespace {

constexpr std::array<char, 8> kMagic{'A', 'R', 'K', 'V', 'T', 'R', 'C', '\0'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kRecordFixedBytes = 16;  // layer, step, queries, keys

std::string where(std::size_t i) { return "record " + std::to_string(i) + ": "; }

// The last min(queries, window) queries against keys [0, keys - window).
AttnWindow window_of(const AttnTensor& a, int window, int layer_id) {
  const int n_q = std::min(a.queries, window);
  const int n_k = a.keys - window;
  AttnWindow w{layer_id, AttnTensor(a.heads, n_q, n_k)};
  const int q0 = a.queries - n_q;
  for (int h = 0; h < a.heads; ++h) {
    for (int q = 0; q < n_q; ++q) {
      for (int k = 0; k < n_k; ++k) w.weights.at(h, q, k) = a.at(h, q0 + q, k);
    }
  }
  return w;
}

}  // namespace

void write_trace(const std::filesystem::path& path, const AttnTrace& trace) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw TraceError("cannot open " + path.string() + " for writing");
  os.write(kMagic.data(), kMagic.size());
  for (std::uint32_t v : {kVersion, trace.n_layers, trace.n_heads, trace.n_kv_heads, trace.window}) {
    detail::put_u32(os, v);
  }
  for (const auto& r : trace.records) {
    if (static_cast<std::uint32_t>(r.attention.heads) != trace.n_heads) {
      throw ShapeError("record head count disagrees with the trace header");
    }
    const std::size_t payload = kRecordFixedBytes + 4 * r.attention.data.size();
    detail::put_u32(os, static_cast<std::uint32_t>(payload));
    detail::put_u32(os, r.layer_id);
    detail::put_u32(os, r.step);
    detail::put_u32(os, static_cast<std::uint32_t>(r.attention.queries));
    detail::put_u32(os, static_cast<std::uint32_t>(r.attention.keys));
    detail::put_f32s(os, r.attention.data);
  }
  if (!os) throw TraceError("write to " + path.string() + " failed");
}

AttnTrace read_trace(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw TraceError("cannot open trace " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw TraceError(path.string() + " is not an arkv attention trace");
  }
  std::uint32_t version = 0;
  AttnTrace t;
  if (!detail::get_u32(is, version) || !detail::get_u32(is, t.n_layers) ||
      !detail::get_u32(is, t.n_heads) || !detail::get_u32(is, t.n_kv_heads) ||
      !detail::get_u32(is, t.window)) {
    throw TraceError("truncated trace header");
  }
  if (version != kVersion) throw TraceError("unsupported trace version " + std::to_string(version));
  if (t.n_heads == 0 || t.n_kv_heads == 0 || t.n_heads % t.n_kv_heads != 0) {
    throw TraceError("trace header has an invalid head layout");
  }

  std::uint32_t payload = 0;
  while (detail::get_u32(is, payload)) {
    const std::size_t i = t.records.size();
    AttnTraceRecord r;
    std::uint32_t queries = 0;
    std::uint32_t keys = 0;
    if (payload < kRecordFixedBytes || !detail::get_u32(is, r.layer_id) ||
        !detail::get_u32(is, r.step) || !detail::get_u32(is, queries) ||
        !detail::get_u32(is, keys)) {
      throw TraceError(where(i) + "truncated record header");
    }
    const std::uint64_t cells = std::uint64_t{t.n_heads} * queries * keys;
    if (payload != kRecordFixedBytes + 4 * cells) {
      throw TraceError(where(i) + "length prefix disagrees with the declared shape");
    }
    r.attention = AttnTensor(static_cast<int>(t.n_heads), static_cast<int>(queries),
                             static_cast<int>(keys));
    if (!detail::get_f32s(is, r.attention.data)) throw TraceError(where(i) + "truncated data");
    t.records.push_back(std::move(r));
  }
  if (!is.eof()) throw TraceError("read error in " + path.string());
  if (is.gcount() != 0) throw TraceError("trailing partial record");
  return t;
}

TraceValidation validate_trace(const AttnTrace& trace, double tolerance) {
  TraceValidation v;
  auto note = [&v](std::string msg) { v.problems.push_back(std::move(msg)); };
  if (trace.n_layers == 0) note("header declares zero layers");
  if (trace.n_heads == 0 || trace.n_kv_heads == 0 || trace.n_heads % trace.n_kv_heads != 0) {
    note("header has an invalid head layout");
  }
  std::vector<bool> has_prefill(trace.n_layers, false);
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    const auto& r = trace.records[i];
    const AttnTensor& a = r.attention;
    if (r.layer_id >= trace.n_layers) {
      note(where(i) + "layer id out of range");
      continue;
    }
    if (r.step == 0) has_prefill[r.layer_id] = true;
    if (static_cast<std::uint32_t>(a.heads) != trace.n_heads) note(where(i) + "head count mismatch");
    if (a.queries <= 0 || a.keys <= 0) {
      note(where(i) + "empty attention");
      continue;
    }
    if (a.data.size() != static_cast<std::size_t>(a.heads) * a.queries * a.keys) {
      note(where(i) + "data size mismatch");
      continue;
    }
    bool bad_value = false;
    bool bad_row = false;
    for (int h = 0; h < a.heads; ++h) {
      for (int q = 0; q < a.queries; ++q) {
        double sum = 0.0;
        for (int k = 0; k < a.keys; ++k) {
          const float x = a.at(h, q, k);
          if (!std::isfinite(x) || x < 0.0f) bad_value = true;
          sum += x;
        }
        if (sum > 1.0 + tolerance) bad_row = true;
      }
    }
    if (bad_value) note(where(i) + "negative or non-finite weight");
    if (bad_row) note(where(i) + "row mass exceeds 1");
  }
  for (std::uint32_t l = 0; l < trace.n_layers; ++l) {
    if (!has_prefill[l]) note("layer " + std::to_string(l) + " has no step-0 record");
  }
  return v;
}

ReplayResult replay_policy(const AttnTrace& trace, const StrategyConfig& strategy) {
  strategy.validate();
  const auto problems = validate_trace(trace);
  if (!problems.ok()) throw TraceError("invalid trace: " + problems.problems.front());
  if (trace.window != 0 && trace.window != static_cast<std::uint32_t>(strategy.window)) {
    throw TraceError("trace recorded with window " + std::to_string(trace.window) +
                     ", strategy uses " + std::to_string(strategy.window));
  }
  const auto n_layers = static_cast<std::size_t>(trace.n_layers);
  const int window = static_cast<int>(strategy.window);
  const GroupMap groups =
      GroupMap::contiguous(static_cast<int>(trace.n_heads), static_cast<int>(trace.n_kv_heads));

  ReplayResult out;
  std::vector<LayerBudget> budgets(n_layers, LayerBudget::unlimited(strategy.window));
  if (strategy.kind != StrategyKind::kBase) {
    std::vector<AttnWindow> obs(n_layers);
    for (const auto& r : trace.records) {
      if (r.step != 0 || obs[r.layer_id].weights.heads != 0) continue;
      const AttnTensor& a = r.attention;
      const int w_obs = std::min({static_cast<int>(strategy.oq.window), a.queries - 1, a.keys - 2});
      obs[r.layer_id].layer_id = static_cast<int>(r.layer_id);
      if (w_obs >= 1) obs[r.layer_id] = window_of(a, w_obs, static_cast<int>(r.layer_id));
    }
    const double fixed = strategy.kind == StrategyKind::kOriginOnly ? 1.0 : 0.0;
    const OqAllocation alloc =
        strategy.kind == StrategyKind::kArkv
            ? OqAllocation::from_windows(obs, strategy.oq, strategy.budget, strategy.window,
                                         strategy.budget_formula)
            : OqAllocation::fixed(static_cast<int>(n_layers), fixed, strategy.budget,
                                  strategy.window, strategy.budget_formula);
    out.ratios.assign(alloc.ratios().begin(), alloc.ratios().end());
    budgets.assign(alloc.budgets().begin(), alloc.budgets().end());
  }
  out.budgets = budgets;

  for (const auto& r : trace.records) {
    ReplayStep s;
    s.layer_id = r.layer_id;
    s.step = r.step;
    s.keys = static_cast<std::size_t>(r.attention.keys);
    const LayerBudget& b = budgets[r.layer_id];
    s.triggered = HalfUnits::from_tokens(static_cast<std::int64_t>(s.keys)) >= b.total;
    if (s.triggered) {
      if (r.attention.keys <= window) throw TraceError("record too short for the window");
      const AttnWindow w = window_of(r.attention, window, static_cast<int>(r.layer_id));
      const HhScoreVector sc = hh_scores(w, strategy.gamma, groups);
      s.plan = build_plan(sc.scores, s.keys, b, strategy.alpha, static_cast<int>(r.layer_id));
    }
    out.steps.push_back(std::move(s));
  }
  return out;
}

}  // namespace arkv
