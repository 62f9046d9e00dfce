// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// End-to-end orchestration: split, diagnose, probe, mask, fuse, evaluate.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "miner/diagnostics.hpp"
#include "miner/fusion.hpp"
#include "miner/masking.hpp"
#include "miner/optimizer.hpp"
#include "miner/probes.hpp"
#include "miner/repr_store.hpp"
#include "miner/retrieval_eval.hpp"

namespace miner::pipeline {

struct RunConfig {
  std::string dump_path;  // "paths.dump"; not part of the config hash
  std::string out_dir;    // "paths.out"; not part of the config hash
  std::uint64_t seed = 42;
  double tau_cka = 0.6;
  std::size_t k_base = 3;
  double rho = 0.2;
  std::size_t mask_k = 5;
  fusion::Variant variant = fusion::Variant::full;
  masking::StandaloneTarget standalone_target = masking::StandaloneTarget::same_layer;
  bool center = true;
  double train_fraction = 0.8;  // of all pairs
  double val_fraction = 0.5;    // of the pairs left after train
  std::vector<std::size_t> eval_ks{5, 10};
  eval::Gain gain = eval::Gain::exponential;
  probes::ProbeKind post_probe_kind = probes::ProbeKind::norm;
  TrainConfig probe = TrainConfig::probe_defaults();
  TrainConfig fusion = TrainConfig::fusion_defaults();
  std::vector<double> sweep_tau{0.5, 0.55, 0.6, 0.65, 0.7};
  std::vector<double> sweep_rho{0.1, 0.2, 0.3, 0.4};

  /// Sets the global seed and both training seeds.
  RunConfig& with_seed(std::uint64_t s);
  void validate() const;
};

/// Unknown keys are rejected. Block defaults apply to missing fields; a
/// missing training "seed" inherits the global one.
RunConfig parse_run_config(std::string_view json_text);
std::string run_config_json(const RunConfig& cfg);
/// FNV-1a 64 over the canonical JSON without "paths", as 16 lowercase hex
/// digits.
std::string config_hash(const RunConfig& cfg);
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

struct Splits {
  Dump train;
  Dump val;
  Dump test;
};
Splits make_splits(const Dump& dump, const RunConfig& cfg);

/// Jobs covering the probe kinds `variant` needs on `selection`.
std::vector<probes::ProbeJob> probe_jobs(const diagnostics::LayerSelection& selection, fusion::Variant variant);
/// Both kinds on every stored layer; enough for any selection and variant.
std::vector<probes::ProbeJob> all_probe_jobs(const LayerReadoutDataset& data);

fusion::ProbePool train_probe_pool(const LayerReadoutDataset& train, std::span<const probes::ProbeJob> jobs,
                                   const TrainConfig& cfg, std::vector<probes::LossRecord>* trace = nullptr);

/// Diagnostics after replacing every layer's readouts by its `kind` probe
/// output; anchors stay the raw final-layer readouts.
diagnostics::DiagnosticsReport post_probe_report(const LayerReadoutDataset& data, const fusion::ProbePool& pool,
                                                 probes::ProbeKind kind, bool center = true);

masking::MaskSet build_masks(const LayerReadoutDataset& val, const diagnostics::LayerSelection& selection,
                             const fusion::ProbePool& pool, fusion::Variant variant, const RunConfig& cfg);

/// Masks (or all-ones for all_neurons), warm-started head and fusion
/// training on `train`.
fusion::PipelinePlan train_plan(const LayerReadoutDataset& train, const LayerReadoutDataset& val,
                                const diagnostics::LayerSelection& selection, const fusion::ProbePool& pool,
                                fusion::Variant variant, const RunConfig& cfg,
                                std::vector<probes::LossRecord>* fusion_trace = nullptr);

eval::PairedRetrieval evaluate_plan(const LayerReadoutDataset& data, const fusion::PipelinePlan& plan,
                                    const RunConfig& cfg);

struct MetricRow {
  std::string metric;  // "ndcg@k" or "top1"
  double baseline = 0.0;
  double miner = 0.0;
  eval::TTestResult ttest;
};

struct Comparison {
  eval::PairedRetrieval baseline;
  eval::PairedRetrieval miner;
  std::vector<MetricRow> rows;
};

/// Text-to-vision retrieval of `plan` against the raw final-layer baseline,
/// with paired t-tests over per-query scores.
Comparison compare_to_baseline(const LayerReadoutDataset& data, const fusion::PipelinePlan& plan,
                               const RunConfig& cfg);

/// CSV columns: metric,baseline,miner,delta,t,p
std::string comparison_csv(const Comparison& cmp);

struct PipelineResult {
  diagnostics::DiagnosticsReport report;
  diagnostics::LayerSelection selection;
  fusion::ProbePool probes;
  std::vector<probes::LossRecord> probe_trace;
  fusion::PipelinePlan plan;
  std::vector<probes::LossRecord> fusion_trace;
  Comparison comparison;  // on the test split
};

PipelineResult run_pipeline(const Dump& dump, const RunConfig& cfg);

struct SweepRow {
  double tau_cka = 0.0;
  double rho = 0.0;
  std::vector<std::uint32_t> s_cand;
  std::size_t n_candidates = 0;
  double top1 = 0.0;
  double ndcg5 = 0.0;
  double top1_rel_pct = 0.0;  // 100 * top1 / top1 at the default point
};

/// One-at-a-time grid: every tau at cfg.rho, then every rho at cfg.tau_cka.
/// A point whose selection is empty is reported with n_candidates = 0.
std::vector<SweepRow> run_sweep(const Dump& dump, const RunConfig& cfg);

/// CSV columns: tau_cka,rho,s_cand,n_candidates,top1,ndcg@5,top1_rel_pct
/// with s_cand written as "first-last".
std::string sweep_csv(std::span<const SweepRow> rows);

/// plan.json plus one probe file per layer, masks.json and head.fuse.
void save_plan(const std::filesystem::path& dir, const fusion::PipelinePlan& plan);
fusion::PipelinePlan load_plan(const std::filesystem::path& dir);

/// Layout: <dir>/<layer>_<kind>.probe
void save_probe_pool(const std::filesystem::path& dir, const fusion::ProbePool& pool);
fusion::ProbePool load_probe_pool(const std::filesystem::path& dir);

std::string selection_json(const diagnostics::LayerSelection& selection);
diagnostics::LayerSelection parse_selection(std::string_view json_text);

}  // namespace miner::pipeline
