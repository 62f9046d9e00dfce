// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <numeric>
#include <vector>

#include "miner/contrastive.hpp"
#include "miner/fusion.hpp"
#include "miner/probes.hpp"
#include "miner/synth.hpp"

using namespace miner;

namespace {

struct Setup {
  Dump dump;
  probes::ProbeBatch batch;
};

Setup setup(std::size_t batch_size, std::size_t dim) {
  auto dump = synth::generate(synth::rotation_task(1, batch_size * 2, dim));
  std::vector<std::size_t> pairs(batch_size);
  std::iota(pairs.begin(), pairs.end(), std::size_t{0});
  auto cb = make_candidate_batch(pairs, dump.data.hard_negatives);
  auto batch = probes::ProbeBatch::gather(dump.data, 8, cb);
  return {std::move(dump), std::move(batch)};
}

}  // namespace

// args: batch size, dim, kind (0 base, 1 norm)
static void BM_probe_grad(benchmark::State& state) {
  const auto b = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  const auto kind = state.range(2) ? probes::ProbeKind::norm : probes::ProbeKind::base;
  const auto s = setup(b, d);
  const auto params = probes::ProbeParams::identity(8, kind, d);
  const TrainConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(probes::probe_grad(s.batch, params, cfg));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(b));
}
BENCHMARK(BM_probe_grad)->ArgsProduct({{64, 256}, {32, 128}, {0, 1}});

static void BM_train_probe_epoch(benchmark::State& state) {
  const auto dump = synth::generate(synth::rotation_task(1, 2048, 32));
  TrainConfig cfg = TrainConfig::probe_defaults();
  cfg.epochs = 1;
  cfg.batch_size = 64;
  for (auto _ : state)
    benchmark::DoNotOptimize(probes::train_probe(dump.data, 8, probes::ProbeKind::norm, cfg));
}
BENCHMARK(BM_train_probe_epoch)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
