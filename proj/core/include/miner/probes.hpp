// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Retrieval-aligned layer probes.
//
//   BaseProbe(x) = p . x                 (element-wise reweighting)
//   NormProbe(x) = W~ (p . x),  W~_j = W_j / |W_j|   (row-normalized)
//
// Both are trained with a siamese cross-modal InfoNCE: probed text readouts
// align with vision anchors and probed vision readouts with text anchors,
// plus an L1 penalty lambda * |p|_1.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "miner/contrastive.hpp"
#include "miner/linalg.hpp"
#include "miner/optimizer.hpp"
#include "miner/repr_store.hpp"

namespace miner::probes {

enum class ProbeKind : std::uint8_t { base = 0, norm = 1 };

const char* to_string(ProbeKind kind) noexcept;
ProbeKind parse_probe_kind(std::string_view name);

struct ProbeParams {
  std::uint32_t layer = 0;
  ProbeKind kind = ProbeKind::base;
  Vector p;                 // importance vector, length D
  std::optional<Matrix> w;  // raw D x D projection, present iff kind == norm

  /// p = 1 and, for NormProbe, W = I (so W~ = I).
  static ProbeParams identity(std::uint32_t layer, ProbeKind kind, std::size_t dim);

  std::size_t dim() const noexcept { return static_cast<std::size_t>(p.size()); }
  void validate() const;
  /// Row-normalized view of w. Throws Error(degenerate_projection_row).
  Matrix normalized_w() const;
  /// Rounds every parameter through float, matching what a .probe file holds.
  void round_to_float();
};

Vector base_forward(const ProbeParams& params, const Vector& x);
Vector norm_forward(const ProbeParams& params, const Vector& x);
/// Dispatches on params.kind.
Vector apply_probe(const ProbeParams& params, const Vector& x);
/// Row-wise apply over an N x D stack.
Matrix apply_probe_rows(const ProbeParams& params, const Matrix& x);

/// Layer-l readouts of a batch together with the candidate anchors.
/// Rows of the anchor matrices follow CandidateBatch::rows.
struct ProbeBatch {
  Matrix text_x;
  Matrix vision_x;
  Matrix text_anchor;
  Matrix vision_anchor;
  CandidatePool pool;

  static ProbeBatch gather(const LayerReadoutDataset& data, std::uint32_t layer,
                           const CandidateBatch& batch);
};

struct ProbeGrad {
  double loss = 0.0;
  Vector d_p;
  std::optional<Matrix> d_w;
};

double probe_loss(const ProbeBatch& batch, const ProbeParams& params, const TrainConfig& cfg);
/// Analytic gradient of probe_loss. The L1 subgradient is sign(p), 0 at 0.
ProbeGrad probe_grad(const ProbeBatch& batch, const ProbeParams& params, const TrainConfig& cfg);

struct OptimizerState {
  MomentBuffers p;
  MomentBuffers w;
  std::uint64_t step = 0;

  static OptimizerState for_params(const ProbeParams& params);
};

/// AdamW step: w decays by (1 - lr * wd); p never decays. When lambda > 0 a
/// coordinate of p whose sign would flip is set to exactly 0; a step that
/// would zero every coordinate leaves p unchanged.
void optimizer_step(ProbeParams& params, const ProbeGrad& grads, OptimizerState& state,
                    const TrainConfig& cfg, double step_lr);

struct ProbeJob {
  std::uint32_t layer = 0;
  ProbeKind kind = ProbeKind::base;
  friend bool operator==(const ProbeJob&, const ProbeJob&) = default;
};

struct LossRecord {
  std::size_t epoch = 0;  // 1-based
  std::uint32_t layer = 0;
  std::string tag;        // probe kind, or "fusion"
  double loss = 0.0;
};

struct ProbeTrainResult {
  std::vector<ProbeParams> probes;  // same order as the jobs
  std::vector<LossRecord> trace;    // per epoch, per job

  const ProbeParams& find(std::uint32_t layer, ProbeKind kind) const;
};

/// Trains every job jointly: one shared batch order per epoch, independent
/// parameters and optimizer state per probe. Deterministic for a given seed.
ProbeTrainResult train_probes(const LayerReadoutDataset& train, std::span<const ProbeJob> jobs,
                              const TrainConfig& cfg);

ProbeParams train_probe(const LayerReadoutDataset& train, std::uint32_t layer, ProbeKind kind,
                        const TrainConfig& cfg, std::vector<LossRecord>* trace = nullptr);

/// `.probe` codec: "MPR1" | u32 layer | u8 kind | u32 D | f32 p[D] | f32 w[D*D]?
std::vector<std::uint8_t> encode_probe(const ProbeParams& params);
ProbeParams decode_probe(std::span<const std::uint8_t> bytes);

/// CSV columns: epoch,layer,loss. Callers write one file per probe kind.
std::string loss_trace_csv(std::span<const LossRecord> trace);

}  // namespace miner::probes
