// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "fixtures.hpp"
#include "miner/retrieval_eval.hpp"

using namespace miner;

namespace {

constexpr std::size_t kDim = 128;

eval::DenseIndex dense_corpus(std::size_t n_docs) {
  return eval::DenseIndex(testing::gaussian_matrix(n_docs, kDim, 3), [&] {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n_docs; ++i) ids.push_back("d" + std::to_string(i));
    return ids;
  }());
}

}  // namespace

static void BM_dense_search(benchmark::State& state) {
  const auto index = dense_corpus(static_cast<std::size_t>(state.range(0)));
  const Vector q = testing::gaussian_vector(kDim, 9);
  for (auto _ : state) benchmark::DoNotOptimize(index.search(q, 10));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_dense_search)->Arg(1000)->Arg(10000);

// Same document count, `tokens` vectors per document and 16 query tokens.
static void BM_maxsim_search(benchmark::State& state) {
  const auto n_docs = static_cast<std::size_t>(state.range(0));
  const auto tokens = static_cast<std::size_t>(state.range(1));
  eval::MultiVectorIndex index(kDim);
  for (std::size_t i = 0; i < n_docs; ++i)
    index.add("d" + std::to_string(i), testing::gaussian_matrix(tokens, kDim, 100 + i));
  const Matrix q = testing::gaussian_matrix(16, kDim, 9);
  for (auto _ : state) benchmark::DoNotOptimize(index.search(q, 10));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_maxsim_search)->Args({1000, 32})->Args({1000, 100})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
