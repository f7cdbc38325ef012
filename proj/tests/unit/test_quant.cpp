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

#include <cmath>
#include <limits>
#include <random>

#include "arkv/error.hpp"
#include "arkv/quant.hpp"
#include "arkv/tailor.hpp"
#include "oracle/oracle.hpp"
#include "unit/util.hpp"

using namespace arkv;
using arkv::testing::random_entry;

namespace {

TokenEntry single(std::vector<float> key, std::vector<float> value) {
  TokenEntry e;
  e.key = std::move(key);
  e.value = std::move(value);
  return e;
}

}  // namespace

TEST_CASE("hand example rounds half to even") {
  const KvShape shape{1, 3};
  const auto q = quantize_token(single({1.0f, -0.5f, 0.25f}, {0, 0, 0}), shape);
  CHECK(q.key_codes == std::vector<std::int8_t>{127, -64, 32});
  CHECK(q.key_absmax[0] == 1.0f);
  CHECK(kernels::quant_step(q.key_absmax[0]) == 1.0 / 127.0);
  const auto d = dequantize_token(q, shape);
  CHECK(d.key[0] == 1.0f);
  CHECK(d.key[1] == doctest::Approx(-0.50394).epsilon(1e-4));
  CHECK(d.key[2] == doctest::Approx(0.25197).epsilon(1e-4));
  // All-zero value vector.
  CHECK(kernels::quant_step(q.value_absmax[0]) == 1.0);
  CHECK(d.value == std::vector<float>{0, 0, 0});
}

TEST_CASE("max element is exact after the round trip") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(-3.0f, 3.0f);
  const KvShape shape{2, 8};
  for (int t = 0; t < 500; ++t) {
    TokenEntry e = random_entry(0, shape, rng);
    for (auto& v : e.key) v *= u(rng);
    const auto d = dequantize_token(quantize_token(e, shape), shape);
    for (int h = 0; h < 2; ++h) {
      float m = 0;
      int arg = 0;
      for (int i = 0; i < 8; ++i) {
        if (std::fabs(e.key[h * 8 + i]) > m) {
          m = std::fabs(e.key[h * 8 + i]);
          arg = i;
        }
      }
      CHECK(d.key[h * 8 + arg] == e.key[h * 8 + arg]);
    }
  }
}

TEST_CASE("codes agree with the scalar oracle") {
  std::mt19937_64 rng(6);
  const KvShape shape{1, 16};
  int differ = 0;
  for (int t = 0; t < 2000; ++t) {
    const TokenEntry e = random_entry(0, shape, rng);
    const auto q = quantize_token(e, shape);
    const auto ref = oracle::oracle_quantize(e.key);
    for (int i = 0; i < 16; ++i) differ += q.key_codes[i] != ref.codes[i] ? 1 : 0;
  }
  CHECK(differ == 0);
}

TEST_CASE("non-finite input is rejected") {
  const KvShape shape{1, 2};
  CHECK_THROWS_AS(quantize_token(single({1.0f, std::numeric_limits<float>::infinity()}, {0, 0}),
                                 shape),
                  NumericError);
  CHECK_THROWS_AS(quantize_token(single({0, 0}, {std::nanf(""), 0}), shape), NumericError);
  CHECK_THROWS_AS(quantize_token(single({0, 0, 0}, {0, 0}), shape), ShapeError);
}

TEST_CASE("batch quantize matches the per-token path") {
  std::mt19937_64 rng(7);
  const KvShape shape{2, 4};
  std::vector<TokenEntry> entries;
  for (int i = 0; i < 40; ++i) entries.push_back(random_entry(i, shape, rng));
  for (auto exec : {kernels::Exec::kSerial, kernels::Exec::kParallel}) {
    const auto batch = quantize_tokens(entries, shape, exec);
    REQUIRE(batch.size() == entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto one = quantize_token(entries[i], shape);
      CHECK(batch[i].position == one.position);
      CHECK(batch[i].key_codes == one.key_codes);
      CHECK(batch[i].value_absmax == one.value_absmax);
    }
  }
}

TEST_CASE("reconstruct merges both stores by position") {
  std::mt19937_64 rng(8);
  const KvShape shape{1, 4};
  TriStateCache cache(0, shape, testing::budget_of(6, 4, 4, 2));
  std::vector<TokenEntry> all;
  for (int i = 0; i < 6; ++i) {
    all.push_back(random_entry(i, shape, rng));
    cache.append(all.back());
  }
  TailorPlan plan;
  plan.cache_length = 6;
  plan.originals = {1, 4, 5};
  plan.quantize = {0, 3};
  plan.evict = {2};
  apply_plan(cache, plan);
  const auto kv = reconstruct(cache);
  CHECK(kv.rows == 5);
  CHECK(kv.positions == std::vector<std::int64_t>{0, 1, 3, 4, 5});
  CHECK(kv.states[0] == TokenState::kQuantized);
  CHECK(kv.states[1] == TokenState::kOriginal);
  // Original rows come back untouched.
  CHECK(std::equal(all[1].key.begin(), all[1].key.end(), kv.keys.begin() + 4));
  const auto d0 = dequantize_token(quantize_token(all[0], shape), shape);
  CHECK(std::equal(d0.value.begin(), d0.value.end(), kv.values.begin()));

  ReconstructedKv par;
  reconstruct(cache, par, kernels::Exec::kParallel);
  CHECK(par.keys == kv.keys);
  CHECK(par.values == kv.values);
}
