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

// Serial reference vs OpenMP kernels. Arg 0 picks the path (0 serial, 1 omp).

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "arkv/kernels.hpp"

using arkv::kernels::Exec;

namespace {

std::vector<float> normal(std::size_t n) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

Exec exec_of(const benchmark::State& st) {
  return st.range(0) == 0 ? Exec::kSerial : Exec::kParallel;
}

void BM_matvec(benchmark::State& st) {
  const auto rows = static_cast<std::size_t>(st.range(1));
  const std::size_t cols = 512;
  const auto w = normal(rows * cols);
  const auto x = normal(cols);
  std::vector<float> y(rows);
  for (auto _ : st) {
    arkv::kernels::matvec(exec_of(st), w, x, y);
    benchmark::DoNotOptimize(y.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(rows * cols));
}
BENCHMARK(BM_matvec)->ArgsProduct({{0, 1}, {512, 2048}});

void BM_attend(benchmark::State& st) {
  const arkv::kernels::AttentionGeometry g{8, 2, 64};
  const auto rows = static_cast<std::size_t>(st.range(1));
  const auto q = normal(8 * 64);
  const auto k = normal(rows * 2 * 64);
  const auto v = normal(rows * 2 * 64);
  std::vector<std::int64_t> pos(rows);
  for (std::size_t i = 0; i < rows; ++i) pos[i] = static_cast<std::int64_t>(i);
  std::vector<float> probs(8 * rows), out(8 * 64);
  for (auto _ : st) {
    arkv::kernels::attend(exec_of(st), g, q, k, v, pos, static_cast<std::int64_t>(rows), probs,
                          out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_attend)->ArgsProduct({{0, 1}, {512, 4096}});

void BM_quantize(benchmark::State& st) {
  const auto rows = static_cast<std::size_t>(st.range(1));
  const auto x = normal(rows * 2 * 64);
  std::vector<std::int8_t> codes(x.size());
  std::vector<float> absmax(rows * 2);
  for (auto _ : st) {
    arkv::kernels::quantize_rows(exec_of(st), 2, 64, x, codes, absmax);
    benchmark::DoNotOptimize(codes.data());
  }
}
BENCHMARK(BM_quantize)->ArgsProduct({{0, 1}, {256, 4096}});

void BM_dequantize(benchmark::State& st) {
  const auto rows = static_cast<std::size_t>(st.range(1));
  const auto x = normal(rows * 2 * 64);
  std::vector<std::int8_t> codes(x.size());
  std::vector<float> absmax(rows * 2), out(x.size());
  arkv::kernels::quantize_rows(Exec::kSerial, 2, 64, x, codes, absmax);
  for (auto _ : st) {
    arkv::kernels::dequantize_rows(exec_of(st), 2, 64, codes, absmax, out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_dequantize)->ArgsProduct({{0, 1}, {256, 4096}});

}  // namespace

BENCHMARK_MAIN();
