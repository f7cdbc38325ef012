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

#include "oracle/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

namespace oracle {

RawStats oracle_stats(const std::vector<double>& p) {
  const long double n = static_cast<long double>(p.size());
  long double total = 0;
  for (double v : p) total += v;
  const long double mean = total / n;

  RawStats s;
  for (double v : p) {
    if (v > 0) s.entropy -= static_cast<long double>(v) * std::log(static_cast<long double>(v));
  }
  long double m2 = 0;
  long double m4 = 0;
  for (double v : p) {
    const long double d = static_cast<long double>(v) - mean;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m4 /= n;
  s.variance = m2;
  s.degenerate = m2 < 1e-12L;
  s.kurtosis = m2 == 0 ? std::numeric_limits<long double>::quiet_NaN() : m4 / (m2 * m2);
  return s;
}

std::vector<std::size_t> oracle_topk(const std::vector<double>& scores, std::size_t b) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t c) { return scores[a] > scores[c]; });
  idx.resize(std::min(b, idx.size()));
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::string to_string(Violation v) {
  switch (v) {
    case Violation::kPartition: return "partition-violation";
    case Violation::kWindow: return "window-violation";
    case Violation::kBudget: return "budget-violation";
    case Violation::kQuota: return "quota-violation";
    case Violation::kMonotonic: return "monotonicity-violation";
    case Violation::kMismatch: return "partition-mismatch";
  }
  return "unknown";
}

bool Verdict::has(Violation v) const {
  return std::find(violations.begin(), violations.end(), v) != violations.end();
}

Verdict oracle_validate_plan(const Plan& plan, const std::vector<double>& scores,
                             const Budget& budget, double alpha, std::size_t K, std::size_t W) {
  Verdict out;
  auto flag = [&out](Violation v) {
    if (!out.has(v)) out.violations.push_back(v);
  };

  // Partition: each row exactly once.
  std::map<std::size_t, int> state;  // 0 original, 1 quantized, 2 evicted
  const std::vector<const std::vector<std::size_t>*> sets{&plan.originals, &plan.quantize,
                                                          &plan.evict};
  for (int s = 0; s < 3; ++s) {
    for (std::size_t k : *sets[static_cast<std::size_t>(s)]) {
      if (k >= K || state.count(k)) flag(Violation::kPartition);
      state[k] = s;
    }
  }
  if (state.size() != K) flag(Violation::kPartition);

  for (std::size_t k = K - W; k < K; ++k) {
    const auto it = state.find(k);
    if (it == state.end() || it->second != 0) flag(Violation::kWindow);
  }

  const long double usage = 1.0L * plan.originals.size() + 0.5L * plan.quantize.size();
  if (usage > budget.total_half / 2.0L) flag(Violation::kBudget);

  std::int64_t eligible_originals = 0;
  for (std::size_t k : plan.originals) eligible_originals += k < K - W ? 1 : 0;
  if (eligible_originals > budget.original_quota - budget.window ||
      static_cast<std::int64_t>(plan.quantize.size()) > budget.quant_quota) {
    flag(Violation::kQuota);
  }

  // Monotonicity over the evictable region.
  long double min_o = INFINITY, max_q = -INFINITY, min_q = INFINITY, max_e = -INFINITY;
  for (const auto& [k, s] : state) {
    if (k >= K - W || k >= scores.size()) continue;
    const long double v = scores[k];
    if (s == 0) min_o = std::min(min_o, v);
    if (s == 1) {
      max_q = std::max(max_q, v);
      min_q = std::min(min_q, v);
    }
    if (s == 2) max_e = std::max(max_e, v);
  }
  if (min_o < max_q || min_q < max_e || min_o < max_e) flag(Violation::kMonotonic);

  // Re-derivation: rank all evictable rows, keep floor(alpha * n), fill
  // originals then quantized slots, never reaching the budget total.
  const std::size_t n = K - W;
  std::vector<std::size_t> rank(n);
  std::iota(rank.begin(), rank.end(), std::size_t{0});
  std::stable_sort(rank.begin(), rank.end(),
                   [&](std::size_t a, std::size_t c) { return scores[a] > scores[c]; });
  const auto keep = static_cast<std::int64_t>(std::floor(static_cast<long double>(alpha) * n));
  const std::int64_t room = budget.total_half - 1 - 2 * static_cast<std::int64_t>(W);
  std::int64_t n_o = 0;
  std::int64_t n_q = 0;
  std::int64_t used = 0;
  for (std::int64_t i = 0; i < keep; ++i) {
    if (n_o < budget.original_quota - budget.window && used + 2 <= room && n_q == 0) {
      ++n_o;
      used += 2;
    } else if (n_q < budget.quant_quota && used + 1 <= room) {
      ++n_q;
      used += 1;
    } else {
      break;
    }
  }
  std::set<std::size_t> want_o(rank.begin(), rank.begin() + n_o);
  for (std::size_t k = n; k < K; ++k) want_o.insert(k);
  std::set<std::size_t> want_q(rank.begin() + n_o, rank.begin() + n_o + n_q);
  const std::set<std::size_t> got_o(plan.originals.begin(), plan.originals.end());
  const std::set<std::size_t> got_q(plan.quantize.begin(), plan.quantize.end());
  if (got_o != want_o || got_q != want_q) flag(Violation::kMismatch);
  return out;
}

ScalarQuant oracle_quantize(const std::vector<float>& x) {
  long double m = 0;
  for (float v : x) m = std::max(m, std::fabs(static_cast<long double>(v)));
  ScalarQuant q;
  q.codes.assign(x.size(), 0);
  if (m == 0) return q;
  q.scale = m / 127.0L;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const long double r = static_cast<long double>(x[i]) / q.scale;
    // Round half to even, by hand.
    long double f = std::floor(r);
    const long double frac = r - f;
    if (frac > 0.5L || (frac == 0.5L && std::fmod(f, 2.0L) != 0)) f += 1;
    q.codes[i] = static_cast<int>(std::clamp(f, -127.0L, 127.0L));
  }
  return q;
}

std::vector<long double> oracle_hh_scores(const std::vector<float>& weights, int heads,
                                          int queries, int keys,
                                          const std::vector<int>& group_of_head, double gamma) {
  const int n_groups = *std::max_element(group_of_head.begin(), group_of_head.end()) + 1;
  std::vector<long double> out(static_cast<std::size_t>(keys), 0);
  for (int g = 0; g < n_groups; ++g) {
    for (int k = 0; k < keys; ++k) {
      std::vector<long double> samples;
      for (int h = 0; h < heads; ++h) {
        if (group_of_head[static_cast<std::size_t>(h)] != g) continue;
        for (int q = 0; q < queries; ++q) {
          samples.push_back(weights[(static_cast<std::size_t>(h) * queries + q) * keys + k]);
        }
      }
      long double mu = 0;
      for (long double s : samples) mu += s;
      mu /= samples.size();
      long double var = 0;
      for (long double s : samples) var += (s - mu) * (s - mu);
      var /= samples.size();
      out[static_cast<std::size_t>(k)] += mu + gamma * var;
    }
  }
  for (auto& v : out) v /= n_groups;
  return out;
}

}  // namespace oracle
