// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "miner/diagnostics.hpp"
#include "miner/error.hpp"
#include "miner/synth.hpp"

using namespace miner;
using namespace miner::diagnostics;
using miner::testing::gaussian_matrix;

namespace {

double loop_mean_cosine(const Matrix& x, const Matrix& a) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double dot = 0.0, nx = 0.0, na = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      dot += x(i, j) * a(i, j);
      nx += x(i, j) * x(i, j);
      na += a(i, j) * a(i, j);
    }
    sum += dot / std::sqrt(nx * na);
  }
  return sum / static_cast<double>(x.rows());
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected miner::Error");
  return ErrorCode::invalid_argument;
}

Matrix vstack(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() + b.rows(), a.cols());
  out << a, b;
  return out;
}

}  // namespace

TEST_CASE("linear_cka agrees with the Gram-space oracle") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto n = 5 + seed % 40;
    const auto d = 1 + seed % 9;
    Matrix x = gaussian_matrix(n, d, seed);
    Matrix a = gaussian_matrix(n, d, seed + 1000) + 0.3 * x;
    for (bool center : {true, false}) {
      CHECK(linear_cka(x, a, center) == doctest::Approx(oracle::hsic_cka(x, a, center)).epsilon(1e-10));
    }
  }
}

TEST_CASE("linear_cka properties") {
  Matrix x = gaussian_matrix(64, 8, 1);
  Matrix a = gaussian_matrix(64, 8, 2);
  CHECK(linear_cka(x, x) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(linear_cka(x, a) == doctest::Approx(linear_cka(a, x)).epsilon(1e-12));
  CHECK(linear_cka(3.5 * x, a) == doctest::Approx(linear_cka(x, a)).epsilon(1e-12));
  const Matrix q = synth::random_orthogonal(8, 9);
  CHECK(linear_cka(x * q, a) == doctest::Approx(linear_cka(x, a)).epsilon(1e-12));
  // Centering removes a constant column offset.
  Matrix shifted = x;
  shifted.rowwise() += Eigen::RowVectorXd::Constant(8, 4.0);
  CHECK(linear_cka(shifted, a, true) == doctest::Approx(linear_cka(x, a, true)).epsilon(1e-12));
  CHECK(linear_cka(shifted, a, false) != doctest::Approx(linear_cka(x, a, false)));
}

TEST_CASE("linear_cka errors") {
  Matrix x = gaussian_matrix(10, 3, 1);
  CHECK(code_of([&] { linear_cka(x, gaussian_matrix(10, 4, 2)); }) == ErrorCode::dimension_mismatch);
  CHECK(code_of([&] { linear_cka(x.topRows(1), x.topRows(1)); }) == ErrorCode::invalid_argument);
  Matrix zero = Matrix::Zero(10, 3);
  CHECK(code_of([&] { linear_cka(zero, x); }) == ErrorCode::degenerate_representation);
  // A constant representation is zero after centering.
  Matrix constant = Matrix::Constant(10, 3, 2.0);
  CHECK(code_of([&] { linear_cka(constant, x, true); }) == ErrorCode::degenerate_representation);
  Matrix bad = x;
  bad(0, 0) = std::nan("");
  CHECK(code_of([&] { linear_cka(bad, x); }) == ErrorCode::non_finite);
}

TEST_CASE("mean_cosine") {
  Matrix x = gaussian_matrix(20, 5, 3);
  Matrix a = gaussian_matrix(20, 5, 4);
  CHECK(mean_cosine(x, a) == doctest::Approx(loop_mean_cosine(x, a)).epsilon(1e-12));
  CHECK(mean_cosine(x, x) == doctest::Approx(1.0));
  CHECK(mean_cosine(x, -x) == doctest::Approx(-1.0));
  Matrix z = x;
  z.row(7).setZero();
  CHECK(code_of([&] { mean_cosine(z, a); }) == ErrorCode::zero_norm);
  CHECK(code_of([&] { mean_cosine(Matrix(0, 5), Matrix(0, 5)); }) == ErrorCode::empty_input);
}

TEST_CASE("report pools both directions against the paired anchors") {
  auto dump = testing::small_dump(40, 6, 7);
  const auto& d = dump.data;
  auto report = compute_report(d);
  REQUIRE(report.layers.size() == 3);
  const Matrix anchors = vstack(d.anchors(Modality::vision), d.anchors(Modality::text));

  double lo = 1e9, hi = -1e9;
  for (auto l : d.layers) {
    const Matrix x = vstack(d.layer_matrix(Modality::text, l), d.layer_matrix(Modality::vision, l));
    const auto& row = report.at(l);
    CHECK(row.cka == doctest::Approx(oracle::hsic_cka(x, anchors, true)).epsilon(1e-10));
    CHECK(row.cos_mean == doctest::Approx(loop_mean_cosine(x, anchors)).epsilon(1e-12));
    REQUIRE(row.ar.has_value());
    CHECK(*row.ar == doctest::Approx(row.cos_mean / row.cka));
    lo = std::min(lo, row.cka);
    hi = std::max(hi, row.cka);
  }
  for (const auto& row : report.layers) {
    CHECK(row.cka_norm == doctest::Approx((row.cka - lo) / (hi - lo)));
    CHECK(row.cka_norm >= 0.0);
    CHECK(row.cka_norm <= 1.0);
  }
  CHECK_FALSE(report.layers.front().delta_ar_norm.has_value());
  CHECK(*report.layers[1].delta_ar_norm ==
        doctest::Approx(*report.layers[1].ar_norm - *report.layers[0].ar_norm));
  CHECK(code_of([&] { (void)report.at(99); }) == ErrorCode::invalid_argument);
}

TEST_CASE("flat CKA maps every layer to 1 with a warning") {
  synth::SynthConfig cfg;
  cfg.n_pairs = 30;
  cfg.dim = 4;
  cfg.layers = {{1, synth::Regime::aligned, 1}, {2, synth::Regime::final, 2}};
  auto report = compute_report(synth::generate(cfg).data);
  CHECK(report.cka_all_equal);
  CHECK_FALSE(report.warnings.empty());
  for (const auto& row : report.layers) CHECK(row.cka_norm == 1.0);
}

TEST_CASE("candidate selection and partition") {
  DiagnosticsReport report;
  const double norms[] = {0.1, 0.65, 0.6, 0.9, 1.0, 0.59};
  for (std::uint32_t i = 0; i < 6; ++i) report.layers.push_back({.layer = 2 * i + 2, .cka_norm = norms[i]});

  auto sel = select_candidates(report, 0.6, 3);
  CHECK(sel.s_cand == std::vector<std::uint32_t>{4, 6, 8, 10});
  CHECK(sel.s_base == std::vector<std::uint32_t>{6, 8, 10});
  CHECK(sel.s_norm == std::vector<std::uint32_t>{4});
  CHECK(sel.is_base(8));
  CHECK_FALSE(sel.is_base(4));
  CHECK(sel.contains(4));
  CHECK_FALSE(sel.contains(12));

  auto few = partition({9, 3}, 0.5, 3);
  CHECK(few.s_base == std::vector<std::uint32_t>{3, 9});
  CHECK(few.s_norm.empty());

  CHECK(code_of([&] { select_candidates(report, 1.01, 3); }) == ErrorCode::invalid_argument);
  report.layers[4].cka_norm = 0.5;
  report.layers[3].cka_norm = 0.5;
  report.layers[1].cka_norm = 0.5;
  report.layers[2].cka_norm = 0.5;
  CHECK(code_of([&] { select_candidates(report, 0.7, 3); }) == ErrorCode::no_candidates);
  CHECK(code_of([&] { partition({1}, 0.5, 0); }) == ErrorCode::invalid_argument);
}

TEST_CASE("report csv") {
  DiagnosticsReport report;
  report.layers.push_back({.layer = 3, .cka = 0.5, .cka_norm = 1.0, .cos_mean = 0.25, .ar = 0.5});
  CHECK(report_csv(report) == "layer,cka,cka_norm,cos_mean,ar,ar_norm,delta_ar_norm\n3,0.5,1,0.25,0.5,,\n");
}
