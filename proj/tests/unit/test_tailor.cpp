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

#include <doctest.h>

#include <algorithm>
#include <random>

#include "arkv/error.hpp"
#include "arkv/quant.hpp"
#include "arkv/tailor.hpp"
#include "oracle/oracle.hpp"
#include "unit/util.hpp"

using namespace arkv;
using arkv::testing::budget_of;
using arkv::testing::random_entry;

namespace {

oracle::Plan to_oracle(const TailorPlan& p) { return {p.originals, p.quantize, p.evict}; }

oracle::Budget to_oracle(const LayerBudget& b) {
  return {b.total.raw(), b.original_quota, b.quant_quota, b.window};
}

}  // namespace

TEST_CASE("window stays original and usage lands below the budget") {
  const auto budget = budget_of(16, 10, 12, 4);
  std::vector<double> scores(20);
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = static_cast<double>(i % 7);
  const auto plan = build_plan(scores, 24, budget, 0.75);
  for (std::size_t k = 20; k < 24; ++k) {
    CHECK(std::count(plan.originals.begin(), plan.originals.end(), k) == 1);
  }
  const auto c = count_states(plan);
  CHECK(c.n_original + c.n_quantized + c.n_evicted == 24);
  CHECK(2 * c.n_original + c.n_quantized < 32);
  CHECK(oracle::oracle_validate_plan(to_oracle(plan), scores, to_oracle(budget), 0.75, 24, 4).pass());
}

TEST_CASE("state follows score rank") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0, 1);
  const auto budget = budget_of(40, 20, 40, 8);
  std::vector<double> scores(60);
  for (auto& s : scores) s = u(rng);
  const auto plan = build_plan(scores, 68, budget, 0.75);
  double min_o = 2, max_q = -1, min_q = 2, max_e = -1;
  for (auto k : plan.originals) {
    if (k < 60) min_o = std::min(min_o, scores[k]);
  }
  for (auto k : plan.quantize) {
    max_q = std::max(max_q, scores[k]);
    min_q = std::min(min_q, scores[k]);
  }
  for (auto k : plan.evict) max_e = std::max(max_e, scores[k]);
  CHECK(min_o >= max_q);
  CHECK(min_q >= max_e);
  CHECK_FALSE(plan.quantize.empty());
  CHECK_FALSE(plan.evict.empty());
}

TEST_CASE("a roomy budget with alpha 1 evicts nothing") {
  const auto budget = budget_of(100, 100, 0, 4);
  const std::vector<double> scores(20, 0.5);
  const auto plan = build_plan(scores, 24, budget, 1.0);
  CHECK(plan.evict.empty());
  CHECK(plan.quantize.empty());
  CHECK(plan.originals.size() == 24);
}

TEST_CASE("all-quantized budget") {
  const auto budget = budget_of(32, 4, 56, 4);
  std::vector<double> scores(60);
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = static_cast<double>(i);
  const auto plan = build_plan(scores, 64, budget, 0.75);
  CHECK(plan.originals.size() == 4);
  // 45 kept, room for 63 - 8 = 55 half-units, quota 56.
  CHECK(plan.quantize.size() == 45);
  CHECK(plan.quantize.front() == 15);
}

TEST_CASE("bad arguments") {
  const auto budget = budget_of(16, 8, 16, 4);
  const std::vector<double> scores(10, 1.0);
  CHECK_THROWS_AS(build_plan(scores, 14, budget, 0.0), ArgumentError);
  CHECK_THROWS_AS(build_plan(scores, 14, budget, 1.5), ArgumentError);
  CHECK_THROWS_AS(build_plan(scores, 13, budget, 0.5), ShapeError);
  CHECK_THROWS_AS(build_plan(std::vector<double>{}, 4, budget, 0.5), ArgumentError);
  CHECK_THROWS_AS(build_plan(scores, 14, budget_of(16, 2, 16, 4), 0.5), ConfigError);
}

TEST_CASE("apply_plan moves rows between states") {
  std::mt19937_64 rng(32);
  const KvShape shape{2, 4};
  TriStateCache cache(0, shape, budget_of(8, 6, 4, 2));
  std::vector<TokenEntry> all;
  for (int i = 0; i < 10; ++i) {
    all.push_back(random_entry(i, shape, rng));
    cache.append(all.back());
  }
  TailorPlan plan;
  plan.cache_length = 10;
  plan.originals = {0, 8, 9};
  plan.quantize = {2, 5};
  plan.evict = {1, 3, 4, 6, 7};
  apply_plan(cache, plan, kernels::Exec::kParallel);
  CHECK(cache.positions() == std::vector<std::int64_t>{0, 2, 5, 8, 9});
  CHECK(cache.n_quantized() == 2);
  CHECK(cache.usage().equivalents == HalfUnits(8));
  CHECK_FALSE(cache.needs_tailor());

  // Promote row 1 (position 2) back to original: values are the dequantized ones.
  TailorPlan promote;
  promote.cache_length = 5;
  promote.originals = {0, 1, 3, 4};
  promote.quantize = {2};
  apply_plan(cache, promote);
  const auto back = dequantize_token(quantize_token(all[2], shape), shape);
  CHECK(cache.originals()[1].key == back.key);
  CHECK(cache.n_evicted() == 5);

  TailorPlan broken;
  broken.cache_length = 5;
  broken.originals = {0, 1, 3, 4};
  CHECK_THROWS_AS(apply_plan(cache, broken), IntegrityError);
  broken.evict = {2, 2};
  CHECK_THROWS_AS(apply_plan(cache, broken), IntegrityError);
}

TEST_CASE("demote_outside_window quantizes only old originals") {
  std::mt19937_64 rng(33);
  const KvShape shape{1, 4};
  TriStateCache cache(0, shape, budget_of(64, 4, 120, 4));
  for (int i = 0; i < 10; ++i) cache.append(random_entry(i, shape, rng));
  CHECK(demote_outside_window(cache) == 6);
  CHECK(cache.n_original() == 4);
  CHECK(cache.n_quantized() == 6);
  CHECK(demote_outside_window(cache) == 0);
}

TEST_CASE("plans pass the oracle across random budgets") {
  std::mt19937_64 rng(34);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 500; ++t) {
    const std::int64_t W = 1 + static_cast<std::int64_t>(rng() % 8);
    const std::int64_t B = W + 1 + static_cast<std::int64_t>(rng() % 60);
    const std::int64_t orig = W + static_cast<std::int64_t>(rng() % (B - W + 1));
    const auto budget = budget_of(B, orig, 2 * (B - orig), W);
    const std::size_t K = static_cast<std::size_t>(W) + 1 + rng() % 150;
    std::vector<double> scores(K - static_cast<std::size_t>(W));
    for (auto& s : scores) s = t % 4 == 0 ? static_cast<double>(rng() % 3) : u(rng);
    const double alpha = static_cast<double>(1 + rng() % 64) / 64.0;
    const auto plan = build_plan(scores, K, budget, alpha);
    const auto verdict = oracle::oracle_validate_plan(to_oracle(plan), scores, to_oracle(budget),
                                                      alpha, K, static_cast<std::size_t>(W));
    CHECK(verdict.pass());
  }
}

TEST_CASE("oracle flags injected faults") {
  const auto budget = budget_of(16, 10, 12, 4);
  std::vector<double> scores(20);
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = static_cast<double>(i);
  const auto good = to_oracle(build_plan(scores, 24, budget, 0.75));
  const auto ob = to_oracle(budget);

  auto bad = good;  // a window row quantized
  bad.originals.erase(std::find(bad.originals.begin(), bad.originals.end(), 23));
  bad.quantize.push_back(23);
  CHECK(oracle::oracle_validate_plan(bad, scores, ob, 0.75, 24, 4).has(oracle::Violation::kWindow));

  bad = good;  // over budget by one half-unit
  const std::int64_t used = 2 * static_cast<std::int64_t>(bad.originals.size()) +
                            static_cast<std::int64_t>(bad.quantize.size());
  for (std::int64_t extra = used; extra <= ob.total_half && !bad.evict.empty(); ++extra) {
    bad.quantize.push_back(bad.evict.back());
    bad.evict.pop_back();
  }
  CHECK(oracle::oracle_validate_plan(bad, scores, ob, 0.75, 24, 4).has(oracle::Violation::kBudget));

  bad = good;  // swap an original and an evicted row
  std::swap(bad.originals.front(), bad.evict.front());
  std::sort(bad.originals.begin(), bad.originals.end());
  CHECK(oracle::oracle_validate_plan(bad, scores, ob, 0.75, 24, 4).has(oracle::Violation::kMonotonic));

  bad = good;  // a row dropped from the partition
  bad.evict.pop_back();
  CHECK(oracle::oracle_validate_plan(bad, scores, ob, 0.75, 24, 4).has(oracle::Violation::kPartition));
}
