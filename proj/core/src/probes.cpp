// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#include "miner/probes.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "miner/binary_io.hpp"
#include "miner/error.hpp"
#include "miner/format.hpp"

namespace miner::probes {

const char* to_string(ProbeKind kind) noexcept { return kind == ProbeKind::base ? "base" : "norm"; }

ProbeKind parse_probe_kind(std::string_view name) {
  if (name == "base") return ProbeKind::base;
  if (name == "norm") return ProbeKind::norm;
  throw Error(ErrorCode::parse_error, "unknown probe kind '" + std::string(name) + "'");
}

ProbeParams ProbeParams::identity(std::uint32_t layer, ProbeKind kind, std::size_t dim) {
  ProbeParams p;
  p.layer = layer;
  p.kind = kind;
  p.p = Vector::Ones(static_cast<Eigen::Index>(dim));
  if (kind == ProbeKind::norm) p.w = Matrix::Identity(p.p.size(), p.p.size());
  return p;
}

void ProbeParams::validate() const {
  if (p.size() == 0) throw Error(ErrorCode::invalid_argument, "probe has empty p");
  if (!p.allFinite()) throw Error(ErrorCode::non_finite, "probe p");
  if (kind == ProbeKind::base && w) throw Error(ErrorCode::invalid_argument, "BaseProbe carries no w");
  if (kind == ProbeKind::norm) {
    if (!w) throw Error(ErrorCode::invalid_argument, "NormProbe requires w");
    if (w->rows() != p.size() || w->cols() != p.size()) {
      throw Error(ErrorCode::dimension_mismatch, "NormProbe w must be D x D");
    }
    if (!w->allFinite()) throw Error(ErrorCode::non_finite, "probe w");
  }
}

Matrix ProbeParams::normalized_w() const {
  if (!w) throw Error(ErrorCode::invalid_argument, "BaseProbe has no projection");
  Matrix out = *w;
  for (Eigen::Index j = 0; j < out.rows(); ++j) {
    const double n = out.row(j).norm();
    if (!(n > 0.0)) {
      throw Error(ErrorCode::degenerate_projection_row, "row " + std::to_string(j) + " of W is zero");
    }
    out.row(j) /= n;
  }
  return out;
}

void ProbeParams::round_to_float() {
  p = p.cast<float>().cast<double>();
  if (w) *w = w->cast<float>().cast<double>();
}

namespace {

void check_dim(const ProbeParams& params, Eigen::Index d) {
  if (params.p.size() != d) throw Error(ErrorCode::dimension_mismatch, "probe/readout dimension");
}

}  // namespace

Vector base_forward(const ProbeParams& params, const Vector& x) {
  check_dim(params, x.size());
  return params.p.cwiseProduct(x);
}

Vector norm_forward(const ProbeParams& params, const Vector& x) {
  check_dim(params, x.size());
  return params.normalized_w() * params.p.cwiseProduct(x);
}

Vector apply_probe(const ProbeParams& params, const Vector& x) {
  return params.kind == ProbeKind::base ? base_forward(params, x) : norm_forward(params, x);
}

Matrix apply_probe_rows(const ProbeParams& params, const Matrix& x) {
  check_dim(params, x.cols());
  Matrix y = x * params.p.asDiagonal();
  if (params.kind == ProbeKind::norm) y = y * params.normalized_w().transpose();
  return y;
}

ProbeBatch ProbeBatch::gather(const LayerReadoutDataset& data, std::uint32_t layer,
                              const CandidateBatch& batch) {
  const std::size_t lp = data.layer_position(layer);
  const std::size_t fp = data.layer_position(data.final_layer);
  const auto b = static_cast<Eigen::Index>(batch.pool.batch);
  const auto m = static_cast<Eigen::Index>(batch.rows.size());
  const auto d = static_cast<Eigen::Index>(data.dim);
  ProbeBatch out;
  out.text_x.resize(b, d);
  out.vision_x.resize(b, d);
  out.text_anchor.resize(m, d);
  out.vision_anchor.resize(m, d);
  for (Eigen::Index r = 0; r < m; ++r) {
    const std::size_t pair = batch.rows[static_cast<std::size_t>(r)];
    auto ta = data.readout(Modality::text, fp, pair);
    auto va = data.readout(Modality::vision, fp, pair);
    for (Eigen::Index j = 0; j < d; ++j) {
      out.text_anchor(r, j) = ta[j];
      out.vision_anchor(r, j) = va[j];
    }
    if (r < b) {
      auto tx = data.readout(Modality::text, lp, pair);
      auto vx = data.readout(Modality::vision, lp, pair);
      for (Eigen::Index j = 0; j < d; ++j) {
        out.text_x(r, j) = tx[j];
        out.vision_x(r, j) = vx[j];
      }
    }
  }
  out.pool = batch.pool;
  return out;
}

namespace {

struct Evaluation {
  double loss;
  ProbeGrad grad;
};

Evaluation evaluate(const ProbeBatch& batch, const ProbeParams& params, const TrainConfig& cfg,
                    bool want_grad) {
  params.validate();
  const auto b = static_cast<double>(batch.pool.batch);
  if (batch.pool.batch < 2) throw Error(ErrorCode::invalid_argument, "probe batch needs >= 2 pairs");
  check_dim(params, batch.text_x.cols());

  const bool norm = params.kind == ProbeKind::norm;
  const Matrix w_tilde = norm ? params.normalized_w() : Matrix{};

  Evaluation ev{0.0, {}};
  ev.grad.d_p = Vector::Zero(params.p.size());
  Matrix d_wt;
  if (norm && want_grad) d_wt = Matrix::Zero(params.p.size(), params.p.size());

  // Text queries against vision anchors, then vision queries against text.
  auto direction = [&](const Matrix& x, const Matrix& anchors) {
    const Matrix y = x * params.p.asDiagonal();
    const Matrix q = norm ? Matrix(y * w_tilde.transpose()) : y;
    auto r = infonce_batch(q, anchors, batch.pool, cfg.temperature, want_grad, false);
    ev.loss += 0.5 * r.loss_sum / b;
    if (!want_grad) return;
    const Matrix d_q = (0.5 / b) * r.d_queries;
    const Matrix d_y = norm ? Matrix(d_q * w_tilde) : d_q;
    ev.grad.d_p += d_y.cwiseProduct(x).colwise().sum().transpose();
    if (norm) d_wt += d_q.transpose() * y;
  };
  direction(batch.text_x, batch.vision_anchor);
  direction(batch.vision_x, batch.text_anchor);

  ev.loss += cfg.l1_lambda * params.p.lpNorm<1>();
  if (want_grad) {
    ev.grad.d_p += cfg.l1_lambda * params.p.unaryExpr([](double v) {
      return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
    });
    if (norm) {
      // Backprop through W~_j = W_j / |W_j|: project out the row direction.
      Matrix d_w(d_wt.rows(), d_wt.cols());
      for (Eigen::Index j = 0; j < d_wt.rows(); ++j) {
        const double n = params.w->row(j).norm();
        const double radial = d_wt.row(j).dot(w_tilde.row(j));
        d_w.row(j) = (d_wt.row(j) - radial * w_tilde.row(j)) / n;
      }
      ev.grad.d_w = std::move(d_w);
    }
  }
  ev.grad.loss = ev.loss;
  return ev;
}

}  // namespace

double probe_loss(const ProbeBatch& batch, const ProbeParams& params, const TrainConfig& cfg) {
  return evaluate(batch, params, cfg, false).loss;
}

ProbeGrad probe_grad(const ProbeBatch& batch, const ProbeParams& params, const TrainConfig& cfg) {
  return evaluate(batch, params, cfg, true).grad;
}

OptimizerState OptimizerState::for_params(const ProbeParams& params) {
  OptimizerState s;
  s.p.resize(params.p.size());
  if (params.w) s.w.resize(params.w->size());
  return s;
}

void optimizer_step(ProbeParams& params, const ProbeGrad& grads, OptimizerState& state,
                    const TrainConfig& cfg, double step_lr) {
  if (grads.d_p.size() != params.p.size() || state.p.m.size() != params.p.size()) {
    throw Error(ErrorCode::dimension_mismatch, "optimizer_step p shapes");
  }
  if (params.w.has_value() != grads.d_w.has_value()) {
    throw Error(ErrorCode::dimension_mismatch, "optimizer_step w presence");
  }
  ++state.step;
  const Vector before = params.p;
  adamw_update(params.p.array(), grads.d_p.array(), state.p, state.step, step_lr, 0.0, cfg);
  if (cfg.l1_lambda > 0.0) {
    for (Eigen::Index i = 0; i < params.p.size(); ++i) {
      if (before(i) * params.p(i) < 0.0) params.p(i) = 0.0;
    }
    // On a saturated layer the contrastive gradient vanishes and Adam walks
    // every coordinate to zero at ~lr per step. p = 0 leaves the probe
    // undefined, so a step that would clip the last coordinate is dropped.
    if (params.p.cwiseAbs().maxCoeff() == 0.0) params.p = before;
  }
  if (params.w) {
    if (state.w.m.size() != params.w->size() || grads.d_w->size() != params.w->size()) {
      throw Error(ErrorCode::dimension_mismatch, "optimizer_step w shapes");
    }
    Eigen::Map<Eigen::ArrayXd> w_flat(params.w->data(), params.w->size());
    Eigen::Map<const Eigen::ArrayXd> g_flat(grads.d_w->data(), grads.d_w->size());
    adamw_update(w_flat, g_flat, state.w, state.step, step_lr, cfg.weight_decay, cfg);
  }
}

const ProbeParams& ProbeTrainResult::find(std::uint32_t layer, ProbeKind kind) const {
  for (const auto& p : probes) {
    if (p.layer == layer && p.kind == kind) return p;
  }
  throw Error(ErrorCode::missing_component, std::string("no ") + to_string(kind) +
                                                " probe for layer " + std::to_string(layer));
}

ProbeTrainResult train_probes(const LayerReadoutDataset& train, std::span<const ProbeJob> jobs,
                              const TrainConfig& cfg) {
  cfg.validate();
  train.validate();
  if (train.n_pairs < 2) throw Error(ErrorCode::invalid_argument, "training needs >= 2 pairs");
  for (const auto& job : jobs) train.layer_position(job.layer);

  ProbeTrainResult result;
  std::vector<OptimizerState> states;
  for (const auto& job : jobs) {
    result.probes.push_back(ProbeParams::identity(job.layer, job.kind, train.dim));
    states.push_back(OptimizerState::for_params(result.probes.back()));
  }

  const std::size_t batch_size = std::min<std::size_t>(cfg.batch_size, train.n_pairs);
  std::mt19937_64 rng(cfg.seed);
  std::size_t step = 0;
  std::size_t total_steps = 0;
  std::vector<double> epoch_loss(jobs.size());

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = seeded_permutation(train.n_pairs, rng());
    const auto batches = make_batches(order, batch_size);
    if (total_steps == 0) total_steps = batches.size() * cfg.epochs;
    std::fill(epoch_loss.begin(), epoch_loss.end(), 0.0);

    for (const auto& pairs : batches) {
      ++step;
      const double lr = scheduled_lr(cfg, step, total_steps);
      const auto cand = make_candidate_batch(pairs, train.hard_negatives);
      for (std::size_t k = 0; k < jobs.size(); ++k) {
        const auto batch = ProbeBatch::gather(train, jobs[k].layer, cand);
        const auto grad = probe_grad(batch, result.probes[k], cfg);
        epoch_loss[k] += grad.loss * static_cast<double>(pairs.size());
        optimizer_step(result.probes[k], grad, states[k], cfg, lr);
      }
    }
    for (std::size_t k = 0; k < jobs.size(); ++k) {
      result.trace.push_back({epoch, jobs[k].layer, to_string(jobs[k].kind),
                              epoch_loss[k] / static_cast<double>(train.n_pairs)});
    }
  }
  for (auto& p : result.probes) p.round_to_float();
  return result;
}

ProbeParams train_probe(const LayerReadoutDataset& train, std::uint32_t layer, ProbeKind kind,
                        const TrainConfig& cfg, std::vector<LossRecord>* trace) {
  const ProbeJob job{layer, kind};
  auto result = train_probes(train, std::span<const ProbeJob>(&job, 1), cfg);
  if (trace) *trace = std::move(result.trace);
  return std::move(result.probes.front());
}

std::vector<std::uint8_t> encode_probe(const ProbeParams& params) {
  params.validate();
  io::ByteWriter w;
  w.magic("MPR1");
  w.u32(params.layer);
  w.u8(static_cast<std::uint8_t>(params.kind));
  w.u32(static_cast<std::uint32_t>(params.p.size()));
  for (Eigen::Index i = 0; i < params.p.size(); ++i) w.f32(static_cast<float>(params.p(i)));
  if (params.w) {
    for (Eigen::Index k = 0; k < params.w->size(); ++k) w.f32(static_cast<float>(params.w->data()[k]));
  }
  return std::move(w).take();
}

ProbeParams decode_probe(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  const auto magic = r.magic();
  if (std::string_view(magic.data(), 4) != "MPR1") throw Error(ErrorCode::bad_magic, "not a .probe file");
  ProbeParams out;
  out.layer = r.u32();
  const auto kind = r.u8();
  if (kind > 1) throw Error(ErrorCode::parse_error, "probe kind byte " + std::to_string(kind));
  out.kind = static_cast<ProbeKind>(kind);
  const auto d = static_cast<Eigen::Index>(r.u32());
  r.require(static_cast<std::size_t>(d) * 4);
  out.p.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) out.p(i) = r.f32();
  if (out.kind == ProbeKind::norm) {
    r.require(static_cast<std::size_t>(d * d) * 4);
    Matrix w(d, d);
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = r.f32();
    out.w = std::move(w);
  }
  if (r.remaining() != 0) throw Error(ErrorCode::trailing_bytes, ".probe has trailing bytes");
  out.validate();
  return out;
}

std::string loss_trace_csv(std::span<const LossRecord> trace) {
  std::string out = "epoch,layer,loss\n";
  for (const auto& r : trace) {
    out += std::to_string(r.epoch) + ',' + std::to_string(r.layer) + ',' + fmt_real(r.loss) + '\n';
  }
  return out;
}

}  // namespace miner::probes
