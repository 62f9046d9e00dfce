// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#include "miner/fusion.hpp"

#include <algorithm>
#include <random>

#include "miner/binary_io.hpp"
#include "miner/error.hpp"

namespace miner::fusion {

using probes::ProbeKind;

const char* to_string(Variant v) noexcept {
  switch (v) {
    case Variant::full: return "full";
    case Variant::all_neurons: return "all_neurons";
    case Variant::all_base: return "all_base";
    case Variant::all_norm: return "all_norm";
  }
  return "full";
}

Variant parse_variant(std::string_view name) {
  if (name == "full") return Variant::full;
  if (name == "all_neurons") return Variant::all_neurons;
  if (name == "all_base") return Variant::all_base;
  if (name == "all_norm") return Variant::all_norm;
  throw Error(ErrorCode::parse_error, "unknown variant '" + std::string(name) + "'");
}

FusionHead FusionHead::warm_start(std::span<const std::uint32_t> layers, std::uint32_t final_layer,
                                  std::size_t dim) {
  if (layers.empty()) throw Error(ErrorCode::no_candidates, "fusion head needs >= 1 layer");
  FusionHead h;
  h.layers.assign(layers.begin(), layers.end());
  h.u = Matrix::Zero(static_cast<Eigen::Index>(layers.size()), static_cast<Eigen::Index>(dim));
  h.b = Vector::Zero(static_cast<Eigen::Index>(dim));
  auto it = std::find(h.layers.begin(), h.layers.end(), final_layer);
  if (it == h.layers.end()) it = std::max_element(h.layers.begin(), h.layers.end());
  h.u.row(it - h.layers.begin()).setOnes();
  return h;
}

std::size_t FusionHead::row_of(std::uint32_t layer) const {
  auto it = std::find(layers.begin(), layers.end(), layer);
  if (it == layers.end()) throw Error(ErrorCode::missing_component, "head has no row for layer " + std::to_string(layer));
  return static_cast<std::size_t>(it - layers.begin());
}

void FusionHead::validate() const {
  if (layers.empty()) throw Error(ErrorCode::invalid_argument, "fusion head has no layers");
  if (u.rows() != static_cast<Eigen::Index>(layers.size()) || u.cols() != b.size()) {
    throw Error(ErrorCode::dimension_mismatch, "fusion head U must be |layers| x D");
  }
  if (!u.allFinite() || !b.allFinite()) throw Error(ErrorCode::non_finite, "fusion head");
}

void FusionHead::round_to_float() {
  u = u.cast<float>().cast<double>();
  b = b.cast<float>().cast<double>();
}

ProbeKind required_kind(Variant v, const diagnostics::LayerSelection& selection, std::uint32_t layer) {
  switch (v) {
    case Variant::all_base: return ProbeKind::base;
    case Variant::all_norm: return ProbeKind::norm;
    case Variant::full:
    case Variant::all_neurons: return selection.is_base(layer) ? ProbeKind::base : ProbeKind::norm;
  }
  return ProbeKind::base;
}

ProbeKind PipelinePlan::kind_for(std::uint32_t layer) const {
  auto it = probes.find(layer);
  if (it == probes.end()) throw Error(ErrorCode::missing_component, "no probe for layer " + std::to_string(layer));
  return it->second.kind;
}

void PipelinePlan::validate() const {
  head.validate();
  if (head.layers != selection.s_cand) {
    throw Error(ErrorCode::variant_mismatch, "fusion head layers differ from the candidate set");
  }
  for (auto l : selection.s_cand) {
    auto it = probes.find(l);
    if (it == probes.end()) throw Error(ErrorCode::missing_component, "no probe for layer " + std::to_string(l));
    if (it->second.kind != required_kind(variant, selection, l)) {
      throw Error(ErrorCode::variant_mismatch, std::string("variant ") + to_string(variant) +
                                                   " expects a different probe kind at layer " +
                                                   std::to_string(l));
    }
    if (it->second.dim() != head.dim()) throw Error(ErrorCode::dimension_mismatch, "probe/head dim");
    const auto& m = masks.at(l);
    if (m.mask.size() != head.dim()) throw Error(ErrorCode::dimension_mismatch, "mask/head dim");
    if (variant == Variant::all_neurons && m.retained() != head.dim()) {
      throw Error(ErrorCode::variant_mismatch, "all_neurons requires all-ones masks");
    }
  }
}

PipelinePlan assemble_plan(Variant variant, const diagnostics::LayerSelection& selection,
                           const ProbePool& probe_pool, masking::MaskSet masks, FusionHead head) {
  PipelinePlan plan;
  plan.selection = selection;
  plan.variant = variant;
  for (auto l : selection.s_cand) {
    const auto kind = required_kind(variant, selection, l);
    auto it = probe_pool.find({l, kind});
    if (it == probe_pool.end()) {
      throw Error(ErrorCode::missing_component, std::string("variant ") + to_string(variant) + " needs a " +
                                                    probes::to_string(kind) + " probe at layer " +
                                                    std::to_string(l));
    }
    plan.probes.emplace(l, it->second);
  }
  if (variant == Variant::all_neurons) masks = masking::full_masks(selection.s_cand, head.dim());
  plan.masks = std::move(masks);
  plan.head = std::move(head);
  plan.validate();
  return plan;
}

PipelinePlan identity_plan(std::uint32_t final_layer, std::size_t dim) {
  PipelinePlan plan;
  plan.selection = diagnostics::partition({final_layer}, 0.0, 1);
  plan.probes.emplace(final_layer, probes::ProbeParams::identity(final_layer, ProbeKind::base, dim));
  const std::uint32_t layers[] = {final_layer};
  plan.masks = masking::full_masks(layers, dim);
  plan.head = FusionHead::warm_start(layers, final_layer, dim);
  plan.variant = Variant::full;
  return plan;
}

namespace {

Vector mask_vector(const masking::LayerMask& m) {
  Vector v(static_cast<Eigen::Index>(m.mask.size()));
  for (std::size_t i = 0; i < m.mask.size(); ++i) v(static_cast<Eigen::Index>(i)) = m.mask[i] ? 1.0 : 0.0;
  return v;
}

}  // namespace

Vector processed_readout(const Vector& x, std::uint32_t layer, const PipelinePlan& plan) {
  if (!plan.selection.contains(layer)) {
    throw Error(ErrorCode::invalid_argument, "layer " + std::to_string(layer) + " is not selected");
  }
  const auto& probe = plan.probes.at(layer);
  const Vector masked = mask_vector(plan.masks.at(layer)).cwiseProduct(x);
  if (masked.size() != static_cast<Eigen::Index>(probe.dim())) throw Error(ErrorCode::dimension_mismatch, "readout dim");
  if (probe.kind == ProbeKind::base) return masked;
  return probe.normalized_w() * masked;
}

Matrix processed_rows(const Matrix& x, std::uint32_t layer, const PipelinePlan& plan) {
  if (!plan.selection.contains(layer)) {
    throw Error(ErrorCode::invalid_argument, "layer " + std::to_string(layer) + " is not selected");
  }
  const auto& probe = plan.probes.at(layer);
  if (x.cols() != static_cast<Eigen::Index>(probe.dim())) throw Error(ErrorCode::dimension_mismatch, "readout dim");
  Matrix masked = x * mask_vector(plan.masks.at(layer)).asDiagonal();
  if (probe.kind == ProbeKind::base) return masked;
  return masked * probe.normalized_w().transpose();
}

Vector fuse(std::span<const Vector> readouts, const PipelinePlan& plan) {
  const auto& head = plan.head;
  if (readouts.size() != head.layers.size()) {
    throw Error(ErrorCode::dimension_mismatch, "fuse needs one readout per selected layer");
  }
  Vector e = head.b;
  for (std::size_t i = 0; i < readouts.size(); ++i) {
    e += head.u.row(static_cast<Eigen::Index>(i)).transpose().cwiseProduct(
        processed_readout(readouts[i], head.layers[i], plan));
  }
  return e;
}

Vector embed(const LayerReadoutDataset& data, Modality m, std::size_t sample, const PipelinePlan& plan) {
  std::vector<Vector> readouts;
  for (auto l : plan.head.layers) {
    auto r = data.readout(m, data.layer_position(l), sample);
    Vector v(static_cast<Eigen::Index>(r.size()));
    for (std::size_t j = 0; j < r.size(); ++j) v(static_cast<Eigen::Index>(j)) = r[j];
    readouts.push_back(std::move(v));
  }
  return fuse(readouts, plan);
}

Matrix embed_all(const LayerReadoutDataset& data, Modality m, const PipelinePlan& plan) {
  Matrix e = Matrix::Zero(data.n_pairs, data.dim);
  e.rowwise() += plan.head.b.transpose();
  for (std::size_t i = 0; i < plan.head.layers.size(); ++i) {
    const auto l = plan.head.layers[i];
    const Matrix h = processed_rows(data.layer_matrix(m, l), l, plan);
    e += h * plan.head.u.row(static_cast<Eigen::Index>(i)).asDiagonal();
  }
  return e;
}

namespace {

Matrix fused_rows(const std::vector<Matrix>& h, const FusionHead& head) {
  Matrix e(h.front().rows(), head.b.size());
  e.rowwise() = head.b.transpose();
  for (std::size_t l = 0; l < h.size(); ++l) e += h[l] * head.u.row(static_cast<Eigen::Index>(l)).asDiagonal();
  return e;
}

FusionGrad evaluate(const FusionBatch& batch, const FusionHead& head, double temperature, bool want_grad) {
  head.validate();
  if (batch.text_h.size() != head.layers.size() || batch.vision_h.size() != head.layers.size()) {
    throw Error(ErrorCode::dimension_mismatch, "fusion batch layers");
  }
  if (batch.pool.batch < 2) throw Error(ErrorCode::invalid_argument, "fusion batch needs >= 2 pairs");
  const auto b = static_cast<double>(batch.pool.batch);
  const Matrix e_t = fused_rows(batch.text_h, head);
  const Matrix e_v = fused_rows(batch.vision_h, head);
  auto r = infonce_batch(e_t, e_v, batch.pool, temperature, want_grad, want_grad);
  FusionGrad g;
  g.loss = r.loss_sum / b;
  if (!want_grad) return g;
  const Matrix d_t = r.d_queries / b;
  const Matrix d_v = r.d_candidates / b;
  g.d_u.resize(head.u.rows(), head.u.cols());
  for (std::size_t l = 0; l < head.layers.size(); ++l) {
    g.d_u.row(static_cast<Eigen::Index>(l)) =
        d_t.cwiseProduct(batch.text_h[l]).colwise().sum() + d_v.cwiseProduct(batch.vision_h[l]).colwise().sum();
  }
  g.d_b = (d_t.colwise().sum() + d_v.colwise().sum()).transpose();
  return g;
}

Matrix gather_rows(const Matrix& src, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), src.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = src.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

}  // namespace

double fusion_loss(const FusionBatch& batch, const FusionHead& head, double temperature) {
  return evaluate(batch, head, temperature, false).loss;
}

FusionGrad fusion_grad(const FusionBatch& batch, const FusionHead& head, double temperature) {
  return evaluate(batch, head, temperature, true);
}

FusionTrainResult train_fusion(const LayerReadoutDataset& train, const PipelinePlan& plan,
                               const TrainConfig& cfg) {
  cfg.validate();
  train.validate();
  plan.validate();
  if (train.n_pairs < 2) throw Error(ErrorCode::invalid_argument, "training needs >= 2 pairs");

  // Probes and masks are frozen, so processed readouts are computed once.
  std::vector<Matrix> h_text, h_vision;
  for (auto l : plan.head.layers) {
    h_text.push_back(processed_rows(train.layer_matrix(Modality::text, l), l, plan));
    h_vision.push_back(processed_rows(train.layer_matrix(Modality::vision, l), l, plan));
  }

  FusionTrainResult result;
  result.head = plan.head;
  auto& head = result.head;
  MomentBuffers mu, mb;
  mu.resize(head.u.size());
  mb.resize(head.b.size());
  std::uint64_t opt_step = 0;

  const std::size_t batch_size = std::min<std::size_t>(cfg.batch_size, train.n_pairs);
  std::mt19937_64 rng(cfg.seed);
  std::size_t step = 0;
  std::size_t total_steps = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = seeded_permutation(train.n_pairs, rng());
    const auto batches = make_batches(order, batch_size);
    if (total_steps == 0) total_steps = batches.size() * cfg.epochs;
    double epoch_loss = 0.0;
    for (const auto& pairs : batches) {
      ++step;
      const auto cand = make_candidate_batch(pairs, train.hard_negatives);
      FusionBatch fb;
      fb.pool = cand.pool;
      const std::span<const std::size_t> batch_rows(cand.rows.data(), cand.pool.batch);
      for (std::size_t l = 0; l < h_text.size(); ++l) {
        fb.text_h.push_back(gather_rows(h_text[l], batch_rows));
        fb.vision_h.push_back(gather_rows(h_vision[l], cand.rows));
      }
      const auto g = fusion_grad(fb, head, cfg.temperature);
      epoch_loss += g.loss * static_cast<double>(pairs.size());

      const double lr = scheduled_lr(cfg, step, total_steps);
      ++opt_step;
      Eigen::Map<Eigen::ArrayXd> u_flat(head.u.data(), head.u.size());
      Eigen::Map<const Eigen::ArrayXd> gu_flat(g.d_u.data(), g.d_u.size());
      adamw_update(u_flat, gu_flat, mu, opt_step, lr, cfg.weight_decay, cfg);
      adamw_update(head.b.array(), g.d_b.array(), mb, opt_step, lr, 0.0, cfg);
    }
    result.trace.push_back({epoch, 0, "fusion", epoch_loss / static_cast<double>(train.n_pairs)});
  }
  head.round_to_float();
  return result;
}

std::vector<std::uint8_t> encode_head(const FusionHead& head) {
  head.validate();
  io::ByteWriter w;
  w.magic("MFU1");
  w.u32(static_cast<std::uint32_t>(head.layers.size()));
  w.u32(static_cast<std::uint32_t>(head.b.size()));
  for (auto l : head.layers) w.u32(l);
  for (Eigen::Index k = 0; k < head.u.size(); ++k) w.f32(static_cast<float>(head.u.data()[k]));
  for (Eigen::Index k = 0; k < head.b.size(); ++k) w.f32(static_cast<float>(head.b(k)));
  return std::move(w).take();
}

FusionHead decode_head(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  const auto magic = r.magic();
  if (std::string_view(magic.data(), 4) != "MFU1") throw Error(ErrorCode::bad_magic, "not a .fuse file");
  const auto n_layers = static_cast<Eigen::Index>(r.u32());
  const auto d = static_cast<Eigen::Index>(r.u32());
  r.require(static_cast<std::size_t>(n_layers) * 4 + static_cast<std::size_t>((n_layers + 1) * d) * 4);
  FusionHead h;
  h.layers.resize(static_cast<std::size_t>(n_layers));
  for (auto& l : h.layers) l = r.u32();
  h.u.resize(n_layers, d);
  for (Eigen::Index k = 0; k < h.u.size(); ++k) h.u.data()[k] = r.f32();
  h.b.resize(d);
  for (Eigen::Index k = 0; k < d; ++k) h.b(k) = r.f32();
  if (r.remaining() != 0) throw Error(ErrorCode::trailing_bytes, ".fuse has trailing bytes");
  h.validate();
  return h;
}

}  // namespace miner::fusion
