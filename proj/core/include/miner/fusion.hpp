// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Cross-layer fusion: e = sum_l u_l . h_l + b, where h_l = m_l . x_l for
// base layers and h_l = W~_l (m_l . x_l) for realigned (norm) layers.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "miner/diagnostics.hpp"
#include "miner/masking.hpp"
#include "miner/probes.hpp"

namespace miner::fusion {

enum class Variant { full, all_neurons, all_base, all_norm };

const char* to_string(Variant v) noexcept;
Variant parse_variant(std::string_view name);

struct FusionHead {
  std::vector<std::uint32_t> layers;  // s_cand order
  Matrix u;                           // |layers| x D
  Vector b;                           // D

  /// u = 0 except the final layer's row (or the deepest selected layer when
  /// the final layer is not selected) which is 1; b = 0.
  static FusionHead warm_start(std::span<const std::uint32_t> layers, std::uint32_t final_layer,
                               std::size_t dim);

  std::size_t dim() const noexcept { return static_cast<std::size_t>(b.size()); }
  std::size_t row_of(std::uint32_t layer) const;
  void validate() const;
  void round_to_float();
};

/// Everything needed to embed a sample.
struct PipelinePlan {
  diagnostics::LayerSelection selection;
  std::map<std::uint32_t, probes::ProbeParams> probes;  // one per selected layer
  masking::MaskSet masks;
  FusionHead head;
  Variant variant = Variant::full;

  probes::ProbeKind kind_for(std::uint32_t layer) const;
  void validate() const;
};

/// Probe kind variant `v` assigns to `layer` under `selection`.
probes::ProbeKind required_kind(Variant v, const diagnostics::LayerSelection& selection, std::uint32_t layer);

using ProbePool = std::map<std::pair<std::uint32_t, probes::ProbeKind>, probes::ProbeParams>;

/// Picks each layer's probe by variant, forces all-ones masks for
/// all_neurons and checks the pieces agree. `masks` may be empty for
/// all_neurons. Throws Error(variant_mismatch / missing_component).
PipelinePlan assemble_plan(Variant variant, const diagnostics::LayerSelection& selection,
                           const ProbePool& probes, masking::MaskSet masks, FusionHead head);

/// The dense baseline: final layer only, u = 1, b = 0, all-ones mask, base kind.
PipelinePlan identity_plan(std::uint32_t final_layer, std::size_t dim);

Vector processed_readout(const Vector& x, std::uint32_t layer, const PipelinePlan& plan);
/// Row-wise processed readouts of an N x D stack.
Matrix processed_rows(const Matrix& x, std::uint32_t layer, const PipelinePlan& plan);

/// `readouts[i]` is the readout of plan.head.layers[i].
Vector fuse(std::span<const Vector> readouts, const PipelinePlan& plan);

Vector embed(const LayerReadoutDataset& data, Modality m, std::size_t sample, const PipelinePlan& plan);
/// N x D fused embeddings for every sample of one modality.
Matrix embed_all(const LayerReadoutDataset& data, Modality m, const PipelinePlan& plan);

/// Processed readouts of one batch: text rows follow the batch, vision rows
/// follow CandidateBatch::rows.
struct FusionBatch {
  std::vector<Matrix> text_h;    // per head layer, B x D
  std::vector<Matrix> vision_h;  // per head layer, M x D
  CandidatePool pool;
};

struct FusionGrad {
  double loss = 0.0;
  Matrix d_u;
  Vector d_b;
};

/// Mean over the batch of InfoNCE(e_t, e_v) with in-batch (and hard) negatives.
double fusion_loss(const FusionBatch& batch, const FusionHead& head, double temperature);
FusionGrad fusion_grad(const FusionBatch& batch, const FusionHead& head, double temperature);

struct FusionTrainResult {
  FusionHead head;
  std::vector<probes::LossRecord> trace;  // layer field unused (0)
};

/// Optimizes U and b only; probes and masks stay frozen. Starts from
/// plan.head. Weight decay applies to U, never to b.
FusionTrainResult train_fusion(const LayerReadoutDataset& train, const PipelinePlan& plan,
                               const TrainConfig& cfg);

/// `.fuse` codec: "MFU1" | u32 n_layers | u32 D | u32 layers[] | f32 U | f32 b
std::vector<std::uint8_t> encode_head(const FusionHead& head);
FusionHead decode_head(std::span<const std::uint8_t> bytes);

}  // namespace miner::fusion
