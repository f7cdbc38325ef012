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

#include "arkv/attn_stats.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "arkv/error.hpp"

namespace arkv {

void OqConfig::validate() const {
  if (!(tau1 > 0.0) || !(tau2 > 0.0) || !(tau3 > 0.0)) {
    throw ConfigError("OQ temperatures must be strictly positive");
  }
  if (window < 0) throw ConfigError("OQ window must be non-negative");
}

AttnWindow slice_window(const AttnTensor& full, int window, int layer_id) {
  if (window < 0 || full.queries <= window || full.keys <= window) {
    throw WindowTooLargeError("window " + std::to_string(window) + " needs more than " +
                              std::to_string(window) + " queries and keys (have " +
                              std::to_string(full.queries) + "x" + std::to_string(full.keys) +
                              ")");
  }
  const int q0 = full.queries - window;
  const int n_keys = full.keys - window;
  AttnWindow out{layer_id, AttnTensor(full.heads, window, n_keys)};
  for (int h = 0; h < full.heads; ++h) {
    for (int q = 0; q < window; ++q) {
      const float* src = full.data.data() + full.index(h, q0 + q, 0);
      std::copy(src, src + n_keys, out.weights.data.begin() +
                                       static_cast<std::ptrdiff_t>(out.weights.index(h, q, 0)));
    }
  }
  return out;
}

std::vector<double> key_mass(const AttnWindow& window) {
  const AttnTensor& w = window.weights;
  std::vector<double> p(static_cast<std::size_t>(w.keys), 0.0);
  for (int h = 0; h < w.heads; ++h) {
    for (int q = 0; q < w.queries; ++q) {
      const float* row = w.data.data() + w.index(h, q, 0);
      for (int k = 0; k < w.keys; ++k) p[static_cast<std::size_t>(k)] += row[k];
    }
  }
  double z = 0.0;
  for (double v : p) z += v;
  if (!(z > 0.0)) {
    throw DegenerateDistributionError("windowed attention has no mass");
  }
  for (double& v : p) v /= z;
  return p;
}

AttnStats compute_stats(std::span<const double> p, int layer_id) {
  const auto n = static_cast<double>(p.size());
  const double mean = 1.0 / n;
  double entropy = 0.0;
  double m2 = 0.0;
  double m4 = 0.0;
  for (double pk : p) {
    if (pk > 0.0) entropy -= pk * std::log(pk);
    const double d = pk - mean;
    const double d2 = d * d;
    m2 += d2;
    m4 += d2 * d2;
  }
  m2 /= n;
  m4 /= n;

  AttnStats s;
  s.layer_id = layer_id;
  s.entropy = entropy;
  s.variance = m2;
  s.kurtosis = m2 < kVarianceFloor ? 1.0 : m4 / (m2 * m2);
  return s;
}

double oq_score(const AttnStats& stats, const OqConfig& cfg) {
  const double h = std::max(stats.entropy, kStatEpsilon);
  const double v = std::max(stats.variance, kStatEpsilon);
  const double k = std::max(stats.kurtosis, kStatEpsilon);
  return std::pow(h, 1.0 / cfg.tau1) * std::pow(v, 1.0 / cfg.tau2) * std::pow(k, 1.0 / cfg.tau3);
}

std::vector<double> oq_ratios(std::span<const double> scores) {
  if (scores.empty()) throw ArgumentError("no layer scores");
  const double top = *std::max_element(scores.begin(), scores.end());
  if (!(top > 0.0) || !std::isfinite(top)) {
    throw ArgumentError("OQ scores must contain a finite positive maximum");
  }
  std::vector<double> out(scores.size());
  // q / q is exactly 1 in IEEE arithmetic, so the argmax lands on 1.
  std::transform(scores.begin(), scores.end(), out.begin(), [top](double q) { return q / top; });
  return out;
}

LayerBudget allocate_budget(double ratio, std::int64_t budget, std::int64_t window,
                            BudgetFormula formula) {
  if (window < 0) throw ConfigError("window must be non-negative");
  if (budget <= window) {
    throw ConfigError("budget " + std::to_string(budget) + " must exceed the window " +
                      std::to_string(window));
  }
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ArgumentError("OQ ratio must lie in [0, 1]");

  std::int64_t original = 0;
  if (formula == BudgetFormula::kWindowReserved) {
    original = window + static_cast<std::int64_t>(
                            std::floor(ratio * static_cast<double>(budget - window)));
  } else {
    original = std::max<std::int64_t>(
        window, static_cast<std::int64_t>(std::floor(ratio * static_cast<double>(budget))));
  }
  original = std::min(original, budget);

  LayerBudget b;
  b.total = HalfUnits::from_tokens(budget);
  b.original_quota = original;
  b.quant_quota = 2 * (budget - original);
  b.window = window;
  b.validate();
  return b;
}

std::vector<LayerBudget> allocate_budgets(std::span<const double> ratios, std::int64_t budget,
                                          std::int64_t window, BudgetFormula formula) {
  std::vector<LayerBudget> out;
  out.reserve(ratios.size());
  for (double r : ratios) out.push_back(allocate_budget(r, budget, window, formula));
  return out;
}

OqAllocation::OqAllocation(std::vector<AttnStats> stats, std::vector<double> scores,
                           std::vector<double> ratios, std::vector<LayerBudget> budgets)
    : stats_(std::move(stats)),
      scores_(std::move(scores)),
      ratios_(std::move(ratios)),
      budgets_(std::move(budgets)) {}

OqAllocation OqAllocation::from_windows(std::span<const AttnWindow> windows, const OqConfig& cfg,
                                        std::int64_t budget, std::int64_t window,
                                        BudgetFormula formula) {
  cfg.validate();
  const std::size_t n = windows.size();
  const bool usable = std::all_of(windows.begin(), windows.end(), [](const AttnWindow& w) {
    return w.weights.keys >= 2 && w.weights.queries >= 1;
  });
  if (!usable) {
    // Too little context for statistics: keep every layer at full precision.
    std::vector<AttnStats> stats(n);
    for (std::size_t l = 0; l < n; ++l) stats[l].layer_id = static_cast<int>(l);
    std::vector<double> ones(n, 1.0);
    auto budgets = allocate_budgets(ones, budget, window, formula);
    return OqAllocation(std::move(stats), ones, ones, std::move(budgets));
  }

  std::vector<AttnStats> stats;
  std::vector<double> scores;
  stats.reserve(n);
  scores.reserve(n);
  for (const AttnWindow& w : windows) {
    const auto p = key_mass(w);
    stats.push_back(compute_stats(p, w.layer_id));
    scores.push_back(oq_score(stats.back(), cfg));
  }
  auto ratios = oq_ratios(scores);
  auto budgets = allocate_budgets(ratios, budget, window, formula);
  return OqAllocation(std::move(stats), std::move(scores), std::move(ratios), std::move(budgets));
}

OqAllocation OqAllocation::fixed(int n_layers, double ratio, std::int64_t budget,
                                 std::int64_t window, BudgetFormula formula) {
  const auto n = static_cast<std::size_t>(n_layers);
  std::vector<AttnStats> stats(n);
  for (std::size_t l = 0; l < n; ++l) stats[l].layer_id = static_cast<int>(l);
  std::vector<double> ratios(n, ratio);
  auto budgets = allocate_budgets(ratios, budget, window, formula);
  return OqAllocation(std::move(stats), std::vector<double>(n, ratio), ratios,
                      std::move(budgets));
}

}  // namespace arkv
