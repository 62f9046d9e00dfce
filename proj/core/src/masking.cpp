// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#include "miner/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "miner/error.hpp"
#include "miner/format.hpp"
#include "miner/retrieval_eval.hpp"

namespace miner::masking {

double standalone_layer_ndcg(const LayerReadoutDataset& val, std::uint32_t layer,
                             const probes::ProbeParams& probe, std::size_t k, StandaloneTarget target) {
  if (val.n_pairs == 0) throw Error(ErrorCode::empty_input, "empty validation set");
  if (probe.layer != layer) {
    throw Error(ErrorCode::invalid_argument, "probe for layer " + std::to_string(probe.layer) +
                                                 " used on layer " + std::to_string(layer));
  }
  const Matrix queries = probes::apply_probe_rows(probe, val.layer_matrix(Modality::text, layer));
  const Matrix docs = target == StandaloneTarget::same_layer
                          ? probes::apply_probe_rows(probe, val.layer_matrix(Modality::vision, layer))
                          : val.anchors(Modality::vision);
  const std::size_t ks[] = {k};
  return eval::evaluate_paired(queries, docs, ks, eval::Similarity::cosine).mean_ndcg.front();
}

std::vector<double> layer_utilities(std::span<const double> scores) {
  if (scores.empty()) throw Error(ErrorCode::empty_input, "layer_utilities needs >= 1 layer");
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  std::vector<double> alpha(scores.size(), 1.0);
  if (*hi - *lo > 0.0) {
    for (std::size_t i = 0; i < scores.size(); ++i) alpha[i] = (scores[i] - *lo) / (*hi - *lo);
  }
  return alpha;
}

std::vector<double> retention_ratios(std::span<const double> alpha, double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) throw Error(ErrorCode::invalid_argument, "rho must lie in (0, 1]");
  std::vector<double> out(alpha.size());
  for (std::size_t i = 0; i < alpha.size(); ++i) out[i] = alpha[i] * (1.0 - rho) + rho;
  return out;
}

std::size_t retained_count(double p_ratio, std::size_t dim) {
  if (!(p_ratio > 0.0 && p_ratio <= 1.0)) throw Error(ErrorCode::invalid_argument, "P must lie in (0, 1]");
  const auto n = static_cast<std::size_t>(std::ceil(p_ratio * static_cast<double>(dim)));
  return std::clamp<std::size_t>(n, 1, dim);
}

std::vector<std::uint8_t> build_mask(const Vector& importance, double p_ratio) {
  const auto dim = static_cast<std::size_t>(importance.size());
  const std::size_t keep = retained_count(p_ratio, dim);
  std::vector<std::size_t> order(dim);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(importance[static_cast<Eigen::Index>(a)]) > std::abs(importance[static_cast<Eigen::Index>(b)]);
  });
  std::vector<std::uint8_t> mask(dim, 0);
  for (std::size_t i = 0; i < keep; ++i) mask[order[i]] = 1;
  return mask;
}

std::size_t LayerMask::retained() const noexcept {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

double LayerMask::retained_pct() const noexcept {
  return mask.empty() ? 0.0 : 100.0 * static_cast<double>(retained()) / static_cast<double>(mask.size());
}

const LayerMask& MaskSet::at(std::uint32_t layer) const {
  for (const auto& m : layers) {
    if (m.layer == layer) return m;
  }
  throw Error(ErrorCode::missing_component, "no mask for layer " + std::to_string(layer));
}

bool MaskSet::contains(std::uint32_t layer) const noexcept {
  return std::any_of(layers.begin(), layers.end(), [&](const auto& m) { return m.layer == layer; });
}

MaskSet masks_from_scores(std::span<const std::uint32_t> layers, std::span<const double> scores,
                          const std::map<std::uint32_t, probes::ProbeParams>& probes_by_layer, double rho) {
  if (layers.size() != scores.size()) throw Error(ErrorCode::dimension_mismatch, "one score per layer");
  const auto alpha = layer_utilities(scores);
  const auto ratios = retention_ratios(alpha, rho);
  MaskSet set;
  set.rho = rho;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto it = probes_by_layer.find(layers[i]);
    if (it == probes_by_layer.end()) {
      throw Error(ErrorCode::missing_component, "no probe for layer " + std::to_string(layers[i]));
    }
    set.layers.push_back({layers[i], scores[i], alpha[i], ratios[i], build_mask(it->second.p, ratios[i])});
  }
  return set;
}

MaskSet build_mask_set(const LayerReadoutDataset& val, std::span<const std::uint32_t> layers,
                       const std::map<std::uint32_t, probes::ProbeParams>& probes_by_layer, double rho,
                       std::size_t k, StandaloneTarget target) {
  std::vector<double> scores;
  for (auto l : layers) {
    auto it = probes_by_layer.find(l);
    if (it == probes_by_layer.end()) {
      throw Error(ErrorCode::missing_component, "no probe for layer " + std::to_string(l));
    }
    scores.push_back(standalone_layer_ndcg(val, l, it->second, k, target));
  }
  return masks_from_scores(layers, scores, probes_by_layer, rho);
}

MaskSet full_masks(std::span<const std::uint32_t> layers, std::size_t dim) {
  MaskSet set;
  set.rho = 1.0;
  for (auto l : layers) set.layers.push_back({l, 0.0, 1.0, 1.0, std::vector<std::uint8_t>(dim, 1)});
  return set;
}

std::string mask_csv(const MaskSet& masks) {
  std::string out = "layer,standalone_ndcg,alpha,p_ratio,retained_pct\n";
  for (const auto& m : masks.layers) {
    out += std::to_string(m.layer) + ',' + fmt_real(m.standalone_ndcg) + ',' + fmt_real(m.alpha) + ',' +
           fmt_real(m.p_ratio) + ',' + fmt_real(m.retained_pct()) + '\n';
  }
  return out;
}

std::string encode_mask_set(const MaskSet& masks) {
  nlohmann::json doc;
  doc["rho"] = masks.rho;
  doc["layers"] = nlohmann::json::array();
  for (const auto& m : masks.layers) {
    std::string bits;
    for (auto b : m.mask) bits.push_back(b ? '1' : '0');
    doc["layers"].push_back({{"layer", m.layer},
                             {"standalone_ndcg", m.standalone_ndcg},
                             {"alpha", m.alpha},
                             {"p_ratio", m.p_ratio},
                             {"mask", bits}});
  }
  return doc.dump(2) + "\n";
}

MaskSet decode_mask_set(std::string_view json_text) {
  MaskSet set;
  try {
    const auto doc = nlohmann::json::parse(json_text);
    set.rho = doc.at("rho").get<double>();
    for (const auto& e : doc.at("layers")) {
      LayerMask m;
      m.layer = e.at("layer").get<std::uint32_t>();
      m.standalone_ndcg = e.at("standalone_ndcg").get<double>();
      m.alpha = e.at("alpha").get<double>();
      m.p_ratio = e.at("p_ratio").get<double>();
      for (char c : e.at("mask").get<std::string>()) {
        if (c != '0' && c != '1') throw Error(ErrorCode::parse_error, "mask bits must be 0/1");
        m.mask.push_back(c == '1' ? 1 : 0);
      }
      set.layers.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("mask set: ") + e.what());
  }
  return set;
}

}  // namespace miner::masking
