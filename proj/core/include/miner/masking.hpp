// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Performance-adaptive neuron masking. Each selected layer's standalone
// validation nDCG@5 becomes a min-max utility alpha, the retention ratio is
// P = alpha * (1 - rho) + rho, and the mask keeps the ceil(P * D) dimensions
// with the largest |p|.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "miner/probes.hpp"
#include "miner/repr_store.hpp"

namespace miner::masking {

/// Candidate pool used for a layer's standalone score.
enum class StandaloneTarget {
  same_layer,     // probed text vs probed vision readouts of the same layer
  final_anchors,  // probed text vs raw vision final-layer readouts
};

double standalone_layer_ndcg(const LayerReadoutDataset& val, std::uint32_t layer,
                             const probes::ProbeParams& probe, std::size_t k = 5,
                             StandaloneTarget target = StandaloneTarget::same_layer);

/// Min-max over the given scores; an all-equal input (incl. one layer) maps to 1.
std::vector<double> layer_utilities(std::span<const double> scores);
std::vector<double> retention_ratios(std::span<const double> alpha, double rho);

/// ceil(P * D), at least 1 and at most D.
std::size_t retained_count(double p_ratio, std::size_t dim);

/// Ones on the ceil(P * D) largest |p| coordinates; ties go to the lower index.
std::vector<std::uint8_t> build_mask(const Vector& importance, double p_ratio);

struct LayerMask {
  std::uint32_t layer = 0;
  double standalone_ndcg = 0.0;
  double alpha = 1.0;
  double p_ratio = 1.0;
  std::vector<std::uint8_t> mask;

  std::size_t retained() const noexcept;
  double retained_pct() const noexcept;
};

struct MaskSet {
  double rho = 0.2;
  std::vector<LayerMask> layers;  // selection order

  const LayerMask& at(std::uint32_t layer) const;
  bool contains(std::uint32_t layer) const noexcept;
};

/// Scores each layer with its probe on `val`, then builds masks from the probe
/// importance vectors. `probes_by_layer` must hold one probe per layer.
MaskSet build_mask_set(const LayerReadoutDataset& val, std::span<const std::uint32_t> layers,
                       const std::map<std::uint32_t, probes::ProbeParams>& probes_by_layer, double rho,
                       std::size_t k = 5, StandaloneTarget target = StandaloneTarget::same_layer);

/// Same masks from precomputed scores (used by sweeps over rho).
MaskSet masks_from_scores(std::span<const std::uint32_t> layers, std::span<const double> scores,
                          const std::map<std::uint32_t, probes::ProbeParams>& probes_by_layer, double rho);

/// All-ones masks; the "all neurons" ablation.
MaskSet full_masks(std::span<const std::uint32_t> layers, std::size_t dim);

/// CSV columns: layer,standalone_ndcg,alpha,p_ratio,retained_pct
std::string mask_csv(const MaskSet& masks);

std::string encode_mask_set(const MaskSet& masks);  // JSON
MaskSet decode_mask_set(std::string_view json_text);

}  // namespace miner::masking
