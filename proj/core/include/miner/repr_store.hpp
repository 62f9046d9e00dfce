// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Layerwise readout dumps: the in-memory dataset, the `.lrd` payload codec,
// its JSON manifest and pair-level splitting.
//
// Payload layout (little-endian):
//   "LRD1" | u32 version=1 | u32 D | u32 n_layers | u32 N
//   | u32 layer[n_layers] | u32 final_layer
//   | f32 text[n_layers][N][D] | f32 vision[n_layers][N][D]

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "miner/linalg.hpp"

namespace miner {

enum class Modality { text, vision };
enum class SplitTag { train, val, test, unsplit };

const char* to_string(SplitTag tag) noexcept;
SplitTag parse_split_tag(std::string_view name);

struct LayerReadoutDataset {
  std::uint32_t dim = 0;
  std::vector<std::uint32_t> layers;
  std::uint32_t final_layer = 0;
  std::uint32_t n_pairs = 0;
  // [layer position][sample][dim], 32-bit on purpose: bit-identical to disk.
  std::vector<float> text;
  std::vector<float> vision;
  // Empty, or one list per pair of other pair indices (vision-side negatives).
  std::vector<std::vector<std::uint32_t>> hard_negatives;
  SplitTag split = SplitTag::unsplit;

  std::size_t layer_count() const noexcept { return layers.size(); }
  // Throws Error(invalid_argument) when `layer` is not stored.
  std::size_t layer_position(std::uint32_t layer) const;
  bool has_layer(std::uint32_t layer) const noexcept;

  std::span<const float> readout(Modality m, std::size_t layer_pos, std::size_t sample) const;
  std::span<float> readout(Modality m, std::size_t layer_pos, std::size_t sample);

  /// N x D copy of one layer, promoted to 64-bit.
  Matrix layer_matrix(Modality m, std::uint32_t layer) const;
  Matrix anchors(Modality m) const { return layer_matrix(m, final_layer); }

  /// Checks every type invariant; throws Error on the first violation.
  void validate() const;
};

struct DumpManifest {
  std::uint32_t format_version = 1;
  std::vector<std::string> pair_ids;
  std::string provenance;
};

/// A dataset with its manifest; what reading or generating a dump yields.
struct Dump {
  LayerReadoutDataset data;
  DumpManifest manifest;
};

struct DumpBytes {
  std::vector<std::uint8_t> payload;
  std::string manifest;
};

inline constexpr std::uint32_t kDumpVersion = 1;

std::size_t payload_size(std::uint32_t dim, std::size_t n_layers, std::uint32_t n_pairs) noexcept;

DumpBytes write_dump(const LayerReadoutDataset& dataset, const DumpManifest& manifest);
Dump read_dump(std::span<const std::uint8_t> payload, std::string_view manifest);

std::filesystem::path manifest_path_for(const std::filesystem::path& lrd_path);
void save_dump(const std::filesystem::path& lrd_path, const Dump& dump);
Dump load_dump(const std::filesystem::path& lrd_path,
               std::optional<std::filesystem::path> manifest_path = std::nullopt);

/// Keeps the given pairs (in the order given); hard negatives are remapped
/// and dropped when they point outside the subset.
Dump subset(const Dump& dump, std::span<const std::size_t> pair_indices, SplitTag tag);

struct SplitResult {
  Dump train;
  Dump val;
};

/// Deterministic pair-level partition. Pairs keep their original relative
/// order inside each side.
SplitResult split(const Dump& dump, double train_fraction, std::uint64_t seed);

/// Seeded Fisher-Yates permutation of [0, n); shared by split and training.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

}  // namespace miner
