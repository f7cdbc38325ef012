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

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "arkv/kv_store.hpp"

namespace arkv {

/// Dense [heads][queries][keys] attention probabilities.
struct AttnTensor {
  int heads = 0;
  int queries = 0;
  int keys = 0;
  std::vector<float> data;

  AttnTensor() = default;
  AttnTensor(int h, int q, int k)
      : heads(h), queries(q), keys(k), data(static_cast<std::size_t>(h) * q * k, 0.0f) {}

  std::size_t index(int h, int q, int k) const {
    return (static_cast<std::size_t>(h) * queries + static_cast<std::size_t>(q)) * keys +
           static_cast<std::size_t>(k);
  }
  float at(int h, int q, int k) const { return data[index(h, q, k)]; }
  float& at(int h, int q, int k) { return data[index(h, q, k)]; }
};

/// Observation-window slice: the last W queries against the evictable keys
/// [0, K-W).
struct AttnWindow {
  int layer_id = 0;
  AttnTensor weights;
};

struct AttnStats {
  double entropy = 0.0;   // nats
  double variance = 0.0;
  double kurtosis = 1.0;  // 1.0 when variance < kVarianceFloor
  int layer_id = 0;
};

inline constexpr double kStatEpsilon = 1e-6;
inline constexpr double kVarianceFloor = 1e-12;

struct OqConfig {
  double tau1 = 7.774;
  double tau2 = 5.407;
  double tau3 = 5.528;
  int window = 32;

  void validate() const;
};

enum class BudgetFormula {
  kWindowReserved,  // original = W + floor(rho * (B - W))
  kProportional,    // original = max(W, floor(rho * B))
};

/// Throws WindowTooLargeError when the attention has W or fewer queries or keys.
AttnWindow slice_window(const AttnTensor& full, int window, int layer_id = 0);

/// p_k = sum over heads and queries of the windowed weights, normalized
/// once by the grand total. Throws DegenerateDistributionError if all zero.
std::vector<double> key_mass(const AttnWindow& window);

/// Entropy, variance and kurtosis of a distribution over n >= 2 keys.
AttnStats compute_stats(std::span<const double> p, int layer_id = 0);

/// q = H^(1/tau1) * V^(1/tau2) * K^(1/tau3), each factor clamped to
/// kStatEpsilon first.
double oq_score(const AttnStats& stats, const OqConfig& cfg);

/// rho_l = q_l / max q. The argmax layer(s) get exactly 1.
std::vector<double> oq_ratios(std::span<const double> scores);

LayerBudget allocate_budget(double ratio, std::int64_t budget, std::int64_t window,
                            BudgetFormula formula = BudgetFormula::kWindowReserved);

std::vector<LayerBudget> allocate_budgets(std::span<const double> ratios, std::int64_t budget,
                                          std::int64_t window,
                                          BudgetFormula formula = BudgetFormula::kWindowReserved);

/// Per-layer allocation computed once from prefill attention. Read-only
/// after construction.
class OqAllocation {
 public:
  OqAllocation(std::vector<AttnStats> stats, std::vector<double> scores,
               std::vector<double> ratios, std::vector<LayerBudget> budgets);

  /// Stats -> scores -> ratios -> budgets for one window per layer. Layers
  /// whose window is too small for statistics get ratio 1.
  static OqAllocation from_windows(std::span<const AttnWindow> windows, const OqConfig& cfg,
                                   std::int64_t budget, std::int64_t window,
                                   BudgetFormula formula);

  /// Every layer at the same fixed ratio (origin-only: 1, quant-only: 0).
  static OqAllocation fixed(int n_layers, double ratio, std::int64_t budget, std::int64_t window,
                            BudgetFormula formula);

  std::span<const AttnStats> stats() const { return stats_; }
  std::span<const double> scores() const { return scores_; }
  std::span<const double> ratios() const { return ratios_; }
  std::span<const LayerBudget> budgets() const { return budgets_; }

 private:
  std::vector<AttnStats> stats_;
  std::vector<double> scores_;
  std::vector<double> ratios_;
  std::vector<LayerBudget> budgets_;
};

}  // namespace arkv
