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

#include <numeric>

#include "arkv/error.hpp"
#include "arkv/generate.hpp"
#include "arkv/model.hpp"

using namespace arkv;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.n_layers = 2;
  c.n_query_heads = 4;
  c.n_kv_heads = 2;
  c.d_model = 32;
  c.d_head = 8;
  c.vocab_size = 50;
  c.max_seq_len = 512;
  c.rng_seed = 3;
  return c;
}

std::vector<int> prompt_of(int n, int vocab) {
  std::vector<int> p(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = (7 * i + 3) % vocab;
  return p;
}

StrategyConfig strategy(StrategyKind kind, std::int64_t budget, std::int64_t window) {
  StrategyConfig s;
  s.kind = kind;
  s.budget = budget;
  s.window = window;
  s.oq.window = static_cast<int>(window);
  return s;
}

}  // namespace

TEST_CASE("random weights are reproducible and checked") {
  const auto cfg = tiny();
  const auto a = Weights::random(cfg);
  const auto b = Weights::random(cfg);
  CHECK(a.lm_head == b.lm_head);
  CHECK(a.layers[1].wq == b.layers[1].wq);
  auto broken = a;
  broken.layers[0].wk.pop_back();
  CHECK_THROWS_AS(broken.check(cfg), ShapeError);
  auto other = cfg;
  other.rng_seed = 4;
  CHECK(Weights::random(other).lm_head != a.lm_head);
}

TEST_CASE("config validation") {
  auto c = tiny();
  c.n_kv_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.d_model = 30;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_strategy_kind("quant_only") == StrategyKind::kQuantOnly);
  CHECK(to_string(StrategyKind::kOriginOnly) == "origin_only");
  CHECK_THROWS_AS(parse_strategy_kind("h2o"), ConfigError);
  c = tiny();
  c.sink_bias = {1.0f};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  auto s = strategy(StrategyKind::kArkv, 8, 8);
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("session sequencing errors") {
  const Model model(tiny());
  Session s(model, strategy(StrategyKind::kBase, 64, 8));
  CHECK_THROWS_AS(s.decode_step(1), SequencingError);
  CHECK_THROWS_AS(s.prefill(std::vector<int>{}), ArgumentError);
  s.prefill(prompt_of(4, 50));
  CHECK_THROWS_AS(s.prefill(prompt_of(4, 50)), SequencingError);
  CHECK_THROWS_AS(s.decode_step(50), ArgumentError);

  Session longer(model, strategy(StrategyKind::kBase, 64, 8));
  CHECK_THROWS_AS(longer.prefill(prompt_of(513, 50)), LengthError);
}

TEST_CASE("serial and parallel sessions produce identical logits") {
  const Model model(tiny());
  const auto p = prompt_of(40, 50);
  for (auto kind : {StrategyKind::kBase, StrategyKind::kArkv, StrategyKind::kQuantOnly}) {
    GenerateOptions a, b;
    a.exec = kernels::Exec::kSerial;
    b.exec = kernels::Exec::kParallel;
    a.keep_logits = b.keep_logits = true;
    const auto ga = generate(model, p, 60, strategy(kind, 32, 8), a);
    const auto gb = generate(model, p, 60, strategy(kind, 32, 8), b);
    CHECK(ga.tokens == gb.tokens);
    CHECK(ga.logits == gb.logits);
  }
}

TEST_CASE("unpressured arkv and origin_only match base bit for bit") {
  const Model model(tiny());
  const auto p = prompt_of(30, 50);
  GenerateOptions o;
  o.keep_logits = true;
  const auto base = generate(model, p, 40, strategy(StrategyKind::kBase, 64, 8), o);
  for (auto kind : {StrategyKind::kArkv, StrategyKind::kOriginOnly}) {
    const auto g = generate(model, p, 40, strategy(kind, 128, 8), o);
    CHECK(g.tokens == base.tokens);
    CHECK(g.logits == base.logits);
    CHECK(g.report.tailor_events == 0);
  }
}

TEST_CASE("budgets hold at every step and strategies keep their shape") {
  const Model model(tiny());
  const auto p = prompt_of(50, 50);
  const std::int64_t B = 32;
  for (auto kind : {StrategyKind::kArkv, StrategyKind::kOriginOnly, StrategyKind::kQuantOnly}) {
    const auto g = generate(model, p, 150, strategy(kind, B, 8));
    for (const auto& st : g.report.steps) {
      CHECK(st.max_layer_usage_half <= 2 * B);
      if (kind == StrategyKind::kOriginOnly) CHECK(st.n_quantized == 0);
    }
    CHECK(g.report.steps.back().n_evicted > 0);
  }
}

TEST_CASE("quant_only evicts only once quantized tokens fill the budget") {
  const Model model(tiny());
  const auto p = prompt_of(10, 50);
  const std::int64_t B = 32, W = 8;
  const auto g = generate(model, p, 80, strategy(StrategyKind::kQuantOnly, B, W));
  for (const auto& st : g.report.steps) {
    // Window at full precision plus everything older at half cost.
    if (2 * W + (st.seq_len - W) < 2 * B) {
      CHECK(st.n_evicted == 0);
      CHECK(st.n_original == 2 * std::min<std::int64_t>(W, st.seq_len));
    }
  }
  CHECK(g.report.steps.back().n_evicted > 0);
}

TEST_CASE("arkv exposes its allocation") {
  const Model model(tiny());
  Session s(model, strategy(StrategyKind::kArkv, 32, 8));
  int plans = 0;
  s.set_plan_observer([&](const TailorPlan& plan, std::span<const double> scores) {
    CHECK(plan.cache_length == plan.originals.size() + plan.quantize.size() + plan.evict.size());
    CHECK(scores.size() + 8 == plan.cache_length);
    ++plans;
  });
  s.prefill(prompt_of(40, 50));
  REQUIRE(s.allocation().has_value());
  const auto r = s.allocation()->ratios();
  CHECK(*std::max_element(r.begin(), r.end()) == 1.0);
  CHECK(s.observation_windows().size() == 2);
  CHECK(s.observation_windows()[0].weights.queries == 8);
  CHECK(plans > 0);
  for (const auto& c : s.caches()) CHECK_FALSE(c.needs_tailor());
}

TEST_CASE("short prompts fall back to full precision ratios") {
  const Model model(tiny());
  Session s(model, strategy(StrategyKind::kArkv, 32, 8));
  s.prefill(prompt_of(2, 50));
  const auto r = s.allocation()->ratios();
  CHECK(std::all_of(r.begin(), r.end(), [](double x) { return x == 1.0; }));
}

TEST_CASE("kl and comparison helpers") {
  const std::vector<float> a{1, 2, 3}, b{1, 2, 3}, c{3, 2, 1};
  CHECK(softmax_kl(a, b) == 0.0);
  CHECK(softmax_kl(a, c) > 0.0);
  CHECK(argmax(c) == 0);
  const std::vector<std::vector<float>> ra{a, a}, rc{a, c};
  const auto f = compare_logits(ra, rc);
  CHECK(f.top1_agreement == 0.5);
  CHECK(f.max_abs_logit_delta == 2.0);
  CHECK(f.steps == 2);
}
