// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Seeded synthetic layer-readout datasets with planted ground truth.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "miner/linalg.hpp"
#include "miner/repr_store.hpp"

namespace miner::synth {

/// final: anchor + anchor_sigma noise, independently per modality.
/// aligned: copy of the same modality's final readout.
/// noisy: aligned + N(0, sigma^2) per coordinate.
/// rotated: R * aligned, R orthogonal and seeded.
/// sparse_signal: `support` seeded coordinates carry the anchor (+ sigma
/// noise); remaining coordinates are pair-independent N(0, (1/(snr*sqrt(D)))^2).
enum class Regime { final, aligned, noisy, rotated, sparse_signal };

const char* to_string(Regime r) noexcept;
Regime parse_regime(std::string_view name);

struct LayerSpec {
  std::uint32_t index = 0;
  Regime regime = Regime::aligned;
  std::uint64_t seed = 0;  // rotation / support / noise stream
  double sigma = 0.01;
  std::size_t support = 0;  // sparse_signal only; 0 means D / 8
  double snr = 4.0;         // sparse_signal only
};

struct SynthConfig {
  std::size_t n_pairs = 512;
  std::size_t dim = 32;
  std::uint64_t seed = 42;
  double anchor_sigma = 0.01;
  // L2-normalizes every generated readout row, like a retriever that emits
  // unit-norm embeddings. Anchors are unit-norm regardless.
  bool unit_rows = false;
  std::vector<LayerSpec> layers;  // exactly one Regime::final

  /// Throws Error(invalid_argument) on any inconsistency.
  void validate() const;
  std::uint32_t final_layer() const;
  LayerSpec const& spec(std::uint32_t layer) const;
};

/// {"n_pairs", "dim", "seed", "anchor_sigma", "unit_rows", "layers": [{"index", "regime",
/// "seed", "sigma", "support", "snr"}]}; missing per-layer fields take the
/// LayerSpec defaults.
SynthConfig parse_config(std::string_view json_text);
std::string config_json(const SynthConfig& cfg);

/// Deterministic per config. Layers are stored in ascending index order.
Dump generate(const SynthConfig& cfg);

/// Orthogonal matrix from QR of a seeded Gaussian, with R's diagonal forced
/// positive.
Matrix random_orthogonal(std::size_t dim, std::uint64_t seed);
/// The rotation `generate` applies to a rotated layer.
Matrix planted_rotation(const SynthConfig& cfg, std::uint32_t layer);
/// Ascending support coordinates of a sparse_signal layer.
std::vector<std::size_t> planted_support(const SynthConfig& cfg, std::uint32_t layer);

/// Reference configs used by tests and the CLI.
SynthConfig rotation_task(std::uint64_t seed, std::size_t n_pairs = 2048, std::size_t dim = 32);
SynthConfig planted_signal_task(std::uint64_t seed, std::size_t n_pairs = 4000, std::size_t dim = 32);

}  // namespace miner::synth
