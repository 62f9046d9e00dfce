// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "fixtures.hpp"
#include "miner/diagnostics.hpp"
#include "miner/synth.hpp"

using namespace miner;

static void BM_linear_cka(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  const Matrix x = testing::gaussian_matrix(n, d, 1);
  const Matrix a = testing::gaussian_matrix(n, d, 2);
  for (auto _ : state) benchmark::DoNotOptimize(diagnostics::linear_cka(x, a));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_linear_cka)->ArgsProduct({{512, 2048, 8192}, {32, 128}});

// Full layerwise report over a six-layer dump (2N rows per layer).
static void BM_compute_report(benchmark::State& state) {
  const auto dump = synth::generate(synth::planted_signal_task(42, static_cast<std::size_t>(state.range(0))));
  for (auto _ : state) benchmark::DoNotOptimize(diagnostics::compute_report(dump.data));
}
BENCHMARK(BM_compute_report)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
