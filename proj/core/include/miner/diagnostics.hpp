// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "miner/linalg.hpp"
#include "miner/repr_store.hpp"

namespace miner::diagnostics {

/// Linear CKA between two N x D representations:
///   ||X^T A||_F^2 / (||X^T X||_F * ||A^T A||_F)
/// With `center` set, columns are mean-subtracted across samples first.
/// Throws Error(degenerate_representation) on a zero denominator.
double linear_cka(const Matrix& x, const Matrix& a, bool center = true);

/// Mean over rows of cos(x_i, a_i). Throws Error(zero_norm) on a zero row.
double mean_cosine(const Matrix& x, const Matrix& a);

struct LayerDiagnostics {
  std::uint32_t layer = 0;
  double cka = 0.0;
  double cka_norm = 0.0;
  double cos_mean = 0.0;
  // AR is undefined where cka == 0; such layers are excluded from ar_norm.
  std::optional<double> ar;
  std::optional<double> ar_norm;
  std::optional<double> delta_ar_norm;
};

struct DiagnosticsReport {
  std::vector<LayerDiagnostics> layers;  // dataset layer order
  bool cka_all_equal = false;
  // Layer with the largest positive delta_ar_norm. Advisory only.
  std::optional<std::uint32_t> ar_step_layer;
  std::vector<std::string> warnings;

  const LayerDiagnostics& at(std::uint32_t layer) const;
};

/// Per-layer readout stacks, in the order of `layers`. Lets the same report
/// code run on raw dumps and on probed readouts.
struct ReadoutStacks {
  std::vector<std::uint32_t> layers;
  std::vector<Matrix> text;
  std::vector<Matrix> vision;
  Matrix text_anchor;
  Matrix vision_anchor;

  static ReadoutStacks from_dataset(const LayerReadoutDataset& dataset);
};

/// Each layer readout is compared with the *paired* modality's final-layer
/// readout; text->vision and vision->text rows are pooled (2N rows).
DiagnosticsReport compute_report(const ReadoutStacks& stacks, bool center = true);
DiagnosticsReport compute_report(const LayerReadoutDataset& dataset, bool center = true);

struct LayerSelection {
  double tau_cka = 0.6;
  std::size_t k_base = 3;
  std::vector<std::uint32_t> s_cand;  // ascending layer index
  std::vector<std::uint32_t> s_base;  // the k_base largest indices of s_cand
  std::vector<std::uint32_t> s_norm;  // s_cand \ s_base

  bool is_base(std::uint32_t layer) const;
  bool contains(std::uint32_t layer) const;
};

LayerSelection select_candidates(const DiagnosticsReport& report, double tau, std::size_t k_base = 3);
LayerSelection partition(std::vector<std::uint32_t> s_cand, double tau, std::size_t k_base);

/// CSV columns: layer,cka,cka_norm,cos_mean,ar,ar_norm,delta_ar_norm
std::string report_csv(const DiagnosticsReport& report);

}  // namespace miner::diagnostics
