// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "miner/error.hpp"
#include "miner/probes.hpp"
#include "miner/synth.hpp"

using namespace miner;
using namespace miner::probes;
using miner::testing::gaussian_matrix;
using miner::testing::gaussian_vector;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected miner::Error");
  return ErrorCode::invalid_argument;
}

// Parameters with every |p_i| >= 0.2 so the L1 term is differentiable at
// the probe point and +- h never crosses zero.
ProbeParams random_params(ProbeKind kind, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mag(0.2, 1.5);
  ProbeParams params = ProbeParams::identity(3, kind, dim);
  for (Eigen::Index i = 0; i < params.p.size(); ++i) params.p(i) = (rng() & 1 ? 1.0 : -1.0) * mag(rng);
  if (kind == ProbeKind::norm) {
    *params.w = Matrix::Identity(dim, dim) + 0.5 * gaussian_matrix(dim, dim, seed + 7);
  }
  return params;
}

struct GradCase {
  LayerReadoutDataset data;
  ProbeBatch batch;
};

GradCase grad_case(std::uint64_t seed, std::size_t dim) {
  auto dump = testing::small_dump(14, static_cast<std::uint32_t>(dim), seed);
  auto& d = dump.data;
  d.hard_negatives.assign(d.n_pairs, {});
  d.hard_negatives[0] = {9, 1};
  d.hard_negatives[2] = {10};
  d.hard_negatives[5] = {12, 9};
  std::vector<std::size_t> pairs{0, 1, 2, 3, 4, 5};
  auto cb = make_candidate_batch(pairs, d.hard_negatives);
  return {d, ProbeBatch::gather(d, 4, cb)};
}

double norm_rel_err(const Eigen::ArrayXd& a, const Eigen::ArrayXd& b) {
  return (a - b).matrix().norm() / std::max(1e-12, b.matrix().norm());
}

}  // namespace

TEST_CASE("forwards match element loops") {
  auto params = random_params(ProbeKind::norm, 5, 1);
  Vector x = gaussian_vector(5, 2);
  Vector base = base_forward(params, x);
  for (int i = 0; i < 5; ++i) CHECK(base(i) == doctest::Approx(params.p(i) * x(i)));

  const Matrix wt = params.normalized_w();
  for (int j = 0; j < 5; ++j) {
    CHECK(wt.row(j).norm() == doctest::Approx(1.0));
    double s = 0.0;
    for (int k = 0; k < 5; ++k) s += (*params.w)(j, k) / params.w->row(j).norm() * params.p(k) * x(k);
    CHECK(norm_forward(params, x)(j) == doctest::Approx(s));
  }

  Matrix rows = gaussian_matrix(4, 5, 3);
  for (auto kind : {ProbeKind::base, ProbeKind::norm}) {
    auto pr = random_params(kind, 5, 4);
    Matrix y = apply_probe_rows(pr, rows);
    for (int i = 0; i < 4; ++i) {
      Vector yi = apply_probe(pr, rows.row(i).transpose());
      CHECK((y.row(i).transpose() - yi).norm() <= 1e-12);
    }
  }
  CHECK(code_of([&] { base_forward(params, gaussian_vector(4, 1)); }) == ErrorCode::dimension_mismatch);
}

TEST_CASE("identity init leaves readouts unchanged") {
  Vector x = gaussian_vector(6, 9);
  for (auto kind : {ProbeKind::base, ProbeKind::norm}) {
    auto id = ProbeParams::identity(1, kind, 6);
    CHECK((apply_probe(id, x) - x).norm() == 0.0);
  }
}

TEST_CASE("parameter validation") {
  auto norm = ProbeParams::identity(1, ProbeKind::norm, 3);
  norm.w->row(1).setZero();
  CHECK(code_of([&] { norm.normalized_w(); }) == ErrorCode::degenerate_projection_row);
  auto missing = ProbeParams::identity(1, ProbeKind::norm, 3);
  missing.w.reset();
  CHECK(code_of([&] { missing.validate(); }) == ErrorCode::invalid_argument);
  auto base = ProbeParams::identity(1, ProbeKind::base, 3);
  base.w = Matrix::Identity(3, 3);
  CHECK(code_of([&] { base.validate(); }) == ErrorCode::invalid_argument);
  auto nan = ProbeParams::identity(1, ProbeKind::base, 3);
  nan.p(0) = std::nan("");
  CHECK(code_of([&] { nan.validate(); }) == ErrorCode::non_finite);
  CHECK(code_of([] { parse_probe_kind("deep"); }) == ErrorCode::parse_error);
}

TEST_CASE("probe gradients match central differences") {
  const double h = 1e-5;
  for (auto kind : {ProbeKind::base, ProbeKind::norm}) {
    for (std::uint64_t cfg_id = 0; cfg_id < 20; ++cfg_id) {
      const std::size_t dim = 3 + cfg_id % 4;
      auto gc = grad_case(100 + cfg_id, dim);
      auto params = random_params(kind, dim, 200 + cfg_id);
      TrainConfig cfg;
      cfg.temperature = 0.05 + 0.05 * static_cast<double>(cfg_id % 5);
      cfg.l1_lambda = cfg_id % 2 == 0 ? 3e-4 : 0.05;
      const auto g = probe_grad(gc.batch, params, cfg);
      CHECK(g.loss == doctest::Approx(probe_loss(gc.batch, params, cfg)));

      Eigen::ArrayXd fd_p(params.p.size());
      for (Eigen::Index i = 0; i < params.p.size(); ++i) {
        auto plus = params, minus = params;
        plus.p(i) += h;
        minus.p(i) -= h;
        fd_p(i) = (probe_loss(gc.batch, plus, cfg) - probe_loss(gc.batch, minus, cfg)) / (2 * h);
      }
      INFO("kind=", to_string(kind), " config=", cfg_id);
      CHECK(norm_rel_err(g.d_p.array(), fd_p) <= 1e-4);

      if (kind == ProbeKind::norm) {
        REQUIRE(g.d_w.has_value());
        Eigen::ArrayXd fd_w(params.w->size()), an_w(params.w->size());
        for (Eigen::Index k = 0; k < params.w->size(); ++k) {
          auto plus = params, minus = params;
          plus.w->data()[k] += h;
          minus.w->data()[k] -= h;
          fd_w(k) = (probe_loss(gc.batch, plus, cfg) - probe_loss(gc.batch, minus, cfg)) / (2 * h);
          an_w(k) = g.d_w->data()[k];
        }
        CHECK(norm_rel_err(an_w, fd_w) <= 1e-4);
      } else {
        CHECK_FALSE(g.d_w.has_value());
      }
    }
  }
}

TEST_CASE("row normalization makes the loss invariant to row scale") {
  auto gc = grad_case(5, 4);
  auto params = random_params(ProbeKind::norm, 4, 6);
  TrainConfig cfg;
  auto scaled = params;
  scaled.w->row(2) *= 7.0;
  CHECK(probe_loss(gc.batch, scaled, cfg) == doctest::Approx(probe_loss(gc.batch, params, cfg)).epsilon(1e-12));
  // The radial component of dL/dW is zero for each row.
  auto g = probe_grad(gc.batch, params, cfg);
  for (Eigen::Index j = 0; j < 4; ++j) CHECK(std::abs(g.d_w->row(j).dot(params.w->row(j))) <= 1e-10);
}

TEST_CASE("optimizer step: orthant clipping and decay rules") {
  TrainConfig cfg;
  cfg.l1_lambda = 1e-3;
  cfg.weight_decay = 0.5;
  auto params = ProbeParams::identity(1, ProbeKind::norm, 3);
  params.p << 1e-4, -1e-4, 1.0;
  auto state = OptimizerState::for_params(params);
  ProbeGrad g;
  g.d_p = Vector(3);
  g.d_p << 1.0, -1.0, 0.0;
  g.d_w = Matrix::Zero(3, 3);
  optimizer_step(params, g, state, cfg, 0.1);
  // Both small coordinates would have crossed zero.
  CHECK(params.p(0) == 0.0);
  CHECK(params.p(1) == 0.0);
  // Zero gradient and no decay on p.
  CHECK(params.p(2) == 1.0);
  // W decays by (1 - lr * wd) under a zero gradient.
  CHECK((*params.w)(0, 0) == doctest::Approx(1.0 - 0.1 * 0.5));

  cfg.l1_lambda = 0.0;
  auto free = ProbeParams::identity(1, ProbeKind::base, 1);
  free.p << 1e-4;
  auto st2 = OptimizerState::for_params(free);
  ProbeGrad g2;
  g2.d_p = Vector::Ones(1);
  optimizer_step(free, g2, st2, cfg, 0.1);
  CHECK(free.p(0) < 0.0);

  ProbeGrad missing_w;
  missing_w.d_p = Vector::Zero(3);
  auto st3 = OptimizerState::for_params(params);
  CHECK(code_of([&] { optimizer_step(params, missing_w, st3, cfg, 0.1); }) == ErrorCode::dimension_mismatch);
}

TEST_CASE("a step that would clip every coordinate leaves p unchanged") {
  TrainConfig cfg;
  cfg.l1_lambda = 1e-4;
  auto params = ProbeParams::identity(1, ProbeKind::base, 2);
  params.p << 1e-3, -1e-3;
  auto state = OptimizerState::for_params(params);
  ProbeGrad g;
  g.d_p = Vector(2);
  g.d_p << 1.0, -1.0;
  optimizer_step(params, g, state, cfg, 0.1);
  CHECK(params.p(0) == 1e-3);
  CHECK(params.p(1) == -1e-3);
  CHECK(state.step == 1);
}

TEST_CASE("BaseProbe on a saturated layer keeps a nonzero importance vector") {
  // The aligned layer already matches its anchors; L1 under Adam then drives
  // every coordinate toward zero.
  auto dump = synth::generate(synth::rotation_task(1, 512, 8));
  auto cfg = testing::desk_probe_config(1);
  cfg.epochs = 40;
  const auto probe = train_probe(dump.data, 4, ProbeKind::base, cfg);
  CHECK(probe.p.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("training lowers the loss and is deterministic") {
  auto dump = synth::generate(synth::rotation_task(3, 256, 8));
  auto cfg = testing::desk_probe_config(3);
  cfg.epochs = 5;
  std::vector<ProbeJob> jobs{{8, ProbeKind::norm}, {8, ProbeKind::base}};
  auto a = train_probes(dump.data, jobs, cfg);
  auto b = train_probes(dump.data, jobs, cfg);
  REQUIRE(a.probes.size() == 2);
  CHECK(a.probes[0].p == b.probes[0].p);
  CHECK(*a.probes[0].w == *b.probes[0].w);
  REQUIRE(a.trace.size() == 10);
  CHECK(a.trace.back().loss < a.trace.front().loss);
  CHECK(a.trace.front().tag == "norm");
  CHECK(&a.find(8, ProbeKind::base) == &a.probes[1]);
  CHECK(code_of([&] { (void)a.find(4, ProbeKind::base); }) == ErrorCode::missing_component);
  // A single job trains exactly like the same job inside a group.
  auto solo = train_probe(dump.data, 8, ProbeKind::base, cfg);
  CHECK(solo.p == a.probes[1].p);
  CHECK(code_of([&] { train_probe(dump.data, 5, ProbeKind::base, cfg); }) == ErrorCode::invalid_argument);
}

TEST_CASE("L1 importance recovers a planted sparse support") {
  synth::SynthConfig sc;
  sc.n_pairs = 1024;
  sc.dim = 32;
  sc.seed = 5;
  sc.layers = {{1, synth::Regime::sparse_signal, 1, 0.01, 8, 4.0}, {2, synth::Regime::final, 2}};
  auto dump = synth::generate(sc);
  auto cfg = testing::desk_probe_config(5);
  cfg.epochs = 20;
  cfg.l1_lambda = 1e-3;
  auto probe = train_probe(dump.data, 1, ProbeKind::base, cfg);
  auto planted = synth::planted_support(sc, 1);
  std::vector<std::size_t> order(32);
  for (std::size_t i = 0; i < 32; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return std::abs(probe.p(a)) > std::abs(probe.p(b)); });
  std::size_t hit = 0;
  for (std::size_t k = 0; k < planted.size(); ++k)
    hit += std::count(planted.begin(), planted.end(), order[k]);
  CHECK(static_cast<double>(hit) / static_cast<double>(planted.size()) >= 0.7);
}

TEST_CASE(".probe codec") {
  auto params = random_params(ProbeKind::norm, 4, 11);
  params.round_to_float();
  auto bytes = encode_probe(params);
  CHECK(bytes.size() == 4 + 4 + 1 + 4 + 4 * 4 + 16 * 4);
  auto back = decode_probe(bytes);
  CHECK(back.layer == params.layer);
  CHECK(back.kind == ProbeKind::norm);
  CHECK(back.p == params.p);
  CHECK(*back.w == *params.w);

  auto base = random_params(ProbeKind::base, 3, 2);
  CHECK(decode_probe(encode_probe(base)).p == base.p.cast<float>().cast<double>());

  auto bad = bytes;
  bad[0] = 'Q';
  CHECK(code_of([&] { decode_probe(bad); }) == ErrorCode::bad_magic);
  bad = bytes;
  bad[8] = 5;
  CHECK(code_of([&] { decode_probe(bad); }) == ErrorCode::parse_error);
  bad = bytes;
  bad.pop_back();
  CHECK(code_of([&] { decode_probe(bad); }) == ErrorCode::truncated);
  bad = bytes;
  bad.push_back(1);
  CHECK(code_of([&] { decode_probe(bad); }) == ErrorCode::trailing_bytes);
}

TEST_CASE("loss trace csv") {
  std::vector<LossRecord> trace{{1, 4, "base", 2.5}, {2, 4, "base", 1.25}};
  CHECK(loss_trace_csv(trace) == "epoch,layer,loss\n1,4,2.5\n2,4,1.25\n");
}
