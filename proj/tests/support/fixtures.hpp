// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Small deterministic builders shared by the unit, integration and
// acceptance binaries.

#include <cstdint>
#include <random>
#include <vector>

#include "miner/linalg.hpp"
#include "miner/optimizer.hpp"
#include "miner/pipeline.hpp"
#include "miner/repr_store.hpp"
#include "miner/synth.hpp"

namespace miner::testing {

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = n01(rng);
  return m;
}

inline Vector gaussian_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = n01(rng);
  return v;
}

// Three stored layers: noisy, rotated and final.
inline Dump small_dump(std::uint32_t n_pairs, std::uint32_t dim, std::uint64_t seed) {
  synth::SynthConfig cfg;
  cfg.n_pairs = n_pairs;
  cfg.dim = dim;
  cfg.seed = seed;
  cfg.layers = {{2, synth::Regime::noisy, 2, 0.5}, {4, synth::Regime::rotated, 4}, {6, synth::Regime::final, 6}};
  return synth::generate(cfg);
}

// Training scale suited to a few thousand pairs; the library defaults are
// sized for corpora of millions.
inline TrainConfig desk_probe_config(std::uint64_t seed = 42) {
  TrainConfig cfg = TrainConfig::probe_defaults();
  cfg.learning_rate = 0.1;
  cfg.batch_size = 64;
  cfg.l1_lambda = 1e-4;
  cfg.seed = seed;
  return cfg;
}

inline TrainConfig desk_fusion_config(std::uint64_t seed = 42) {
  TrainConfig cfg = TrainConfig::fusion_defaults();
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 256;
  cfg.seed = seed;
  return cfg;
}

inline pipeline::RunConfig desk_run_config(std::uint64_t seed = 42) {
  pipeline::RunConfig cfg;
  cfg.probe = desk_probe_config(seed);
  cfg.fusion = desk_fusion_config(seed);
  cfg.with_seed(seed);
  return cfg;
}

}  // namespace miner::testing
