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

#include "arkv/hh_scoring.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "arkv/error.hpp"

namespace arkv {

GroupMap GroupMap::contiguous(int n_heads, int n_kv_heads) {
  if (n_heads <= 0 || n_kv_heads <= 0 || n_heads % n_kv_heads != 0) {
    throw ConfigError("query heads must be a positive multiple of KV heads");
  }
  GroupMap m;
  m.n_groups = n_kv_heads;
  m.group_of_head.resize(static_cast<std::size_t>(n_heads));
  const int size = n_heads / n_kv_heads;
  for (int h = 0; h < n_heads; ++h) m.group_of_head[static_cast<std::size_t>(h)] = h / size;
  return m;
}

void GroupMap::validate() const {
  if (n_groups <= 0) throw ConfigError("group map has no groups");
  std::vector<int> members(static_cast<std::size_t>(n_groups), 0);
  for (int g : group_of_head) {
    if (g < 0 || g >= n_groups) throw ConfigError("head assigned to an unknown group");
    ++members[static_cast<std::size_t>(g)];
  }
  if (std::find(members.begin(), members.end(), 0) != members.end()) {
    throw ConfigError("group map has an empty group");
  }
}

HhScoreVector hh_scores(const AttnWindow& window, double gamma, const GroupMap& groups) {
  const AttnTensor& w = window.weights;
  groups.validate();
  if (groups.n_heads() != w.heads) {
    throw ShapeError("group map covers " + std::to_string(groups.n_heads()) +
                     " heads, window has " + std::to_string(w.heads));
  }
  if (!(gamma >= 0.0)) throw ArgumentError("gamma must be non-negative");

  const auto n_keys = static_cast<std::size_t>(w.keys);
  const auto n_groups = static_cast<std::size_t>(groups.n_groups);
  std::vector<double> sum(n_groups * n_keys, 0.0);
  std::vector<double> count(n_groups, 0.0);

  for (int h = 0; h < w.heads; ++h) {
    const auto g = static_cast<std::size_t>(groups.group_of_head[static_cast<std::size_t>(h)]);
    count[g] += w.queries;
    double* s = sum.data() + g * n_keys;
    for (int q = 0; q < w.queries; ++q) {
      const float* row = w.data.data() + w.index(h, q, 0);
      for (std::size_t k = 0; k < n_keys; ++k) s[k] += row[k];
    }
  }
  std::vector<double> mean(sum.size());
  for (std::size_t g = 0; g < n_groups; ++g) {
    for (std::size_t k = 0; k < n_keys; ++k) mean[g * n_keys + k] = sum[g * n_keys + k] / count[g];
  }

  // Second pass around the mean keeps the variance non-negative.
  std::vector<double> sq(sum.size(), 0.0);
  for (int h = 0; h < w.heads; ++h) {
    const auto g = static_cast<std::size_t>(groups.group_of_head[static_cast<std::size_t>(h)]);
    const double* m = mean.data() + g * n_keys;
    double* s = sq.data() + g * n_keys;
    for (int q = 0; q < w.queries; ++q) {
      const float* row = w.data.data() + w.index(h, q, 0);
      for (std::size_t k = 0; k < n_keys; ++k) {
        const double d = row[k] - m[k];
        s[k] += d * d;
      }
    }
  }

  HhScoreVector out;
  out.layer_id = window.layer_id;
  out.gamma = gamma;
  out.group_map = groups;
  out.scores.assign(n_keys, 0.0);
  for (std::size_t g = 0; g < n_groups; ++g) {
    for (std::size_t k = 0; k < n_keys; ++k) {
      const double var = sq[g * n_keys + k] / count[g];
      out.scores[k] += mean[g * n_keys + k] + gamma * var;
    }
  }
  if (n_groups > 1) {
    for (double& s : out.scores) s /= static_cast<double>(n_groups);
  }
  return out;
}

std::vector<std::size_t> rank_top_b(std::span<const double> scores, std::size_t b) {
  if (b > scores.size()) {
    throw ArgumentError("top-b size " + std::to_string(b) + " exceeds " +
                        std::to_string(scores.size()) + " candidates");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto better = [&scores](std::size_t a, std::size_t c) {
    return scores[a] > scores[c] || (scores[a] == scores[c] && a < c);
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(b), idx.end(), better);
  idx.resize(b);
  return idx;
}

std::vector<std::size_t> top_b(std::span<const double> scores, std::size_t b) {
  auto idx = rank_top_b(scores, b);
  std::sort(idx.begin(), idx.end());
  return idx;
}

ScoreSmoother::ScoreSmoother(double beta) : beta_(beta) {
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("smoothing beta must lie in [0, 1)");
}

void ScoreSmoother::apply(std::span<const std::int64_t> positions, std::span<double> scores) {
  if (beta_ == 0.0) return;
  std::unordered_map<std::int64_t, double> next;
  next.reserve(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const auto it = state_.find(positions[i]);
    if (it != state_.end()) scores[i] = beta_ * it->second + (1.0 - beta_) * scores[i];
    next.emplace(positions[i], scores[i]);
  }
  state_ = std::move(next);
}

}  // namespace arkv
