// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#include "miner/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "miner/error.hpp"
#include "miner/format.hpp"

namespace miner::diagnostics {

namespace {

// Spread below this is treated as "all layers equal" when min-max normalizing.
constexpr double kFlatSpread = 1e-12;

Matrix centered(const Matrix& m) {
  const Eigen::RowVectorXd mean = m.colwise().mean();
  return m.rowwise() - mean;
}

Matrix vstack(const Matrix& top, const Matrix& bottom) {
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

}  // namespace

double linear_cka(const Matrix& x_in, const Matrix& a_in, bool center) {
  if (x_in.rows() != a_in.rows() || x_in.cols() != a_in.cols()) {
    throw Error(ErrorCode::dimension_mismatch, "linear_cka expects equal shapes");
  }
  if (x_in.rows() < 2) throw Error(ErrorCode::invalid_argument, "linear_cka needs N >= 2");
  if (!x_in.allFinite() || !a_in.allFinite()) throw Error(ErrorCode::non_finite, "linear_cka input");

  const Matrix x = center ? centered(x_in) : x_in;
  const Matrix a = center ? centered(a_in) : a_in;
  const Matrix xa = x.transpose() * a;
  const Matrix xx = x.transpose() * x;
  const Matrix aa = a.transpose() * a;
  const double denom = xx.norm() * aa.norm();
  if (!(denom > 0.0)) {
    throw Error(ErrorCode::degenerate_representation, "zero Gram norm in linear_cka");
  }
  // Clamp only rounding excursions; Cauchy-Schwarz bounds the exact value.
  return std::clamp(xa.squaredNorm() / denom, 0.0, 1.0);
}

double mean_cosine(const Matrix& x, const Matrix& a) {
  if (x.rows() != a.rows() || x.cols() != a.cols()) {
    throw Error(ErrorCode::dimension_mismatch, "mean_cosine expects equal shapes");
  }
  if (x.rows() == 0) throw Error(ErrorCode::empty_input, "mean_cosine on empty matrices");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double nx = x.row(i).norm();
    const double na = a.row(i).norm();
    if (nx == 0.0 || na == 0.0) {
      throw Error(ErrorCode::zero_norm, "zero-norm row " + std::to_string(i));
    }
    sum += x.row(i).dot(a.row(i)) / (nx * na);
  }
  return sum / static_cast<double>(x.rows());
}

const LayerDiagnostics& DiagnosticsReport::at(std::uint32_t layer) const {
  for (const auto& d : layers) {
    if (d.layer == layer) return d;
  }
  throw Error(ErrorCode::invalid_argument, "layer " + std::to_string(layer) + " not in report");
}

ReadoutStacks ReadoutStacks::from_dataset(const LayerReadoutDataset& dataset) {
  ReadoutStacks s;
  s.layers = dataset.layers;
  for (auto l : dataset.layers) {
    s.text.push_back(dataset.layer_matrix(Modality::text, l));
    s.vision.push_back(dataset.layer_matrix(Modality::vision, l));
  }
  s.text_anchor = dataset.anchors(Modality::text);
  s.vision_anchor = dataset.anchors(Modality::vision);
  return s;
}

DiagnosticsReport compute_report(const ReadoutStacks& stacks, bool center) {
  DiagnosticsReport report;
  // Text readouts pair with vision anchors and vice versa.
  const Matrix anchors = vstack(stacks.vision_anchor, stacks.text_anchor);

  for (std::size_t k = 0; k < stacks.layers.size(); ++k) {
    const Matrix x = vstack(stacks.text[k], stacks.vision[k]);
    LayerDiagnostics d;
    d.layer = stacks.layers[k];
    d.cka = linear_cka(x, anchors, center);
    d.cos_mean = mean_cosine(x, anchors);
    if (d.cka > 0.0) {
      d.ar = d.cos_mean / d.cka;
    } else {
      report.warnings.push_back("layer " + std::to_string(d.layer) + ": cka is 0, AR undefined");
    }
    report.layers.push_back(d);
  }
  if (report.layers.empty()) return report;

  auto [lo, hi] = std::minmax_element(report.layers.begin(), report.layers.end(),
                                      [](const auto& a, const auto& b) { return a.cka < b.cka; });
  const double cka_min = lo->cka;
  const double cka_max = hi->cka;
  report.cka_all_equal = (cka_max - cka_min) <= kFlatSpread;
  if (report.cka_all_equal) {
    report.warnings.push_back("all layers have equal CKA; cka_norm set to 1");
  }
  for (auto& d : report.layers) {
    d.cka_norm = report.cka_all_equal ? 1.0 : (d.cka - cka_min) / (cka_max - cka_min);
  }

  double ar_min = std::numeric_limits<double>::infinity();
  double ar_max = -std::numeric_limits<double>::infinity();
  for (const auto& d : report.layers) {
    if (d.ar) {
      ar_min = std::min(ar_min, *d.ar);
      ar_max = std::max(ar_max, *d.ar);
    }
  }
  for (auto& d : report.layers) {
    if (!d.ar) continue;
    d.ar_norm = (ar_max - ar_min) <= kFlatSpread ? 1.0 : (*d.ar - ar_min) / (ar_max - ar_min);
  }

  double best_step = 0.0;
  for (std::size_t k = 1; k < report.layers.size(); ++k) {
    auto& cur = report.layers[k];
    const auto& prev = report.layers[k - 1];
    if (cur.ar_norm && prev.ar_norm) {
      cur.delta_ar_norm = *cur.ar_norm - *prev.ar_norm;
      if (*cur.delta_ar_norm > best_step) {
        best_step = *cur.delta_ar_norm;
        report.ar_step_layer = cur.layer;
      }
    }
  }
  return report;
}

DiagnosticsReport compute_report(const LayerReadoutDataset& dataset, bool center) {
  dataset.validate();
  return compute_report(ReadoutStacks::from_dataset(dataset), center);
}

bool LayerSelection::is_base(std::uint32_t layer) const {
  return std::find(s_base.begin(), s_base.end(), layer) != s_base.end();
}

bool LayerSelection::contains(std::uint32_t layer) const {
  return std::find(s_cand.begin(), s_cand.end(), layer) != s_cand.end();
}

LayerSelection partition(std::vector<std::uint32_t> s_cand, double tau, std::size_t k_base) {
  if (s_cand.empty()) throw Error(ErrorCode::no_candidates, "no layer passes the CKA cutoff");
  if (k_base == 0) throw Error(ErrorCode::invalid_argument, "k_base must be positive");
  std::sort(s_cand.begin(), s_cand.end());
  LayerSelection sel;
  sel.tau_cka = tau;
  sel.k_base = k_base;
  const std::size_t n_base = std::min(k_base, s_cand.size());
  const auto cut = s_cand.end() - static_cast<std::ptrdiff_t>(n_base);
  sel.s_norm.assign(s_cand.begin(), cut);
  sel.s_base.assign(cut, s_cand.end());
  sel.s_cand = std::move(s_cand);
  return sel;
}

LayerSelection select_candidates(const DiagnosticsReport& report, double tau, std::size_t k_base) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw Error(ErrorCode::invalid_argument, "tau must lie in [0, 1]");
  std::vector<std::uint32_t> cand;
  for (const auto& d : report.layers) {
    if (d.cka_norm >= tau) cand.push_back(d.layer);
  }
  return partition(std::move(cand), tau, k_base);
}

std::string report_csv(const DiagnosticsReport& report) {
  std::string out = "layer,cka,cka_norm,cos_mean,ar,ar_norm,delta_ar_norm\n";
  for (const auto& d : report.layers) {
    out += std::to_string(d.layer) + ',' + fmt_real(d.cka) + ',' + fmt_real(d.cka_norm) + ',' +
           fmt_real(d.cos_mean) + ',' + fmt_opt(d.ar) + ',' + fmt_opt(d.ar_norm) + ',' +
           fmt_opt(d.delta_ar_norm) + '\n';
  }
  return out;
}

}  // namespace miner::diagnostics
