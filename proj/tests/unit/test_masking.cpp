// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "miner/error.hpp"
#include "miner/masking.hpp"
#include "miner/retrieval_eval.hpp"

using namespace miner;
using namespace miner::masking;

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

// Selection by explicit (-|p|, index) ordering.
std::vector<std::uint8_t> oracle_mask(const Vector& p, std::size_t keep) {
  std::vector<std::pair<double, std::size_t>> key;
  for (Eigen::Index i = 0; i < p.size(); ++i) key.emplace_back(-std::abs(p(i)), static_cast<std::size_t>(i));
  std::sort(key.begin(), key.end());
  std::vector<std::uint8_t> m(static_cast<std::size_t>(p.size()), 0);
  for (std::size_t i = 0; i < keep; ++i) m[key[i].second] = 1;
  return m;
}

}  // namespace

TEST_CASE("retained count is ceil(P * D) clamped to [1, D]") {
  CHECK(retained_count(1.0, 32) == 32);
  CHECK(retained_count(0.2, 32) == 7);
  CHECK(retained_count(0.25, 32) == 8);
  CHECK(retained_count(1e-9, 32) == 1);
  CHECK(code_of([] { retained_count(0.0, 4); }) == ErrorCode::invalid_argument);
  CHECK(code_of([] { retained_count(1.5, 4); }) == ErrorCode::invalid_argument);
}

TEST_CASE("build_mask keeps the largest magnitudes, ties to the lower index") {
  Vector p(6);
  p << 0.5, -2.0, 0.5, 0.0, 2.0, -0.5;
  CHECK(build_mask(p, 0.5) == std::vector<std::uint8_t>{1, 1, 0, 0, 1, 0});
  CHECK(build_mask(p, 1.0 / 6.0) == std::vector<std::uint8_t>{0, 1, 0, 0, 0, 0});
  CHECK(build_mask(p, 1.0) == std::vector<std::uint8_t>(6, 1));

  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> level(-3, 3);
  for (int trial = 0; trial < 200; ++trial) {
    Vector q(17);
    for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = 0.25 * level(rng);
    const double ratio = (1 + trial % 17) / 17.0;
    CHECK(build_mask(q, ratio) == oracle_mask(q, retained_count(ratio, 17)));
  }
}

TEST_CASE("utilities and retention ratios") {
  std::vector<double> scores{0.2, 0.6, 0.4};
  auto alpha = layer_utilities(scores);
  CHECK(alpha[0] == 0.0);
  CHECK(alpha[1] == 1.0);
  CHECK(alpha[2] == doctest::Approx(0.5));
  auto ratio = retention_ratios(alpha, 0.2);
  CHECK(ratio[0] == doctest::Approx(0.2));
  CHECK(ratio[1] == doctest::Approx(1.0));
  CHECK(ratio[2] == doctest::Approx(0.6));

  std::vector<double> flat{0.3, 0.3};
  CHECK(layer_utilities(flat) == std::vector<double>{1.0, 1.0});
  std::vector<double> one{0.9};
  CHECK(layer_utilities(one) == std::vector<double>{1.0});
  CHECK(code_of([] { layer_utilities({}); }) == ErrorCode::empty_input);
  CHECK(code_of([&] { retention_ratios(alpha, 0.0); }) == ErrorCode::invalid_argument);
}

TEST_CASE("mask sets from scores") {
  std::map<std::uint32_t, probes::ProbeParams> probes;
  for (std::uint32_t l : {4u, 8u}) {
    auto p = probes::ProbeParams::identity(l, probes::ProbeKind::base, 10);
    for (int i = 0; i < 10; ++i) p.p(i) = l == 4 ? i : -i;
    probes.emplace(l, p);
  }
  std::vector<std::uint32_t> layers{4, 8};
  std::vector<double> scores{0.1, 0.9};
  auto set = masks_from_scores(layers, scores, probes, 0.3);
  CHECK(set.rho == 0.3);
  CHECK(set.at(4).retained() == 3);
  CHECK(set.at(4).mask == std::vector<std::uint8_t>{0, 0, 0, 0, 0, 0, 0, 1, 1, 1});
  CHECK(set.at(8).retained() == 10);
  CHECK(set.at(4).retained_pct() == doctest::Approx(30.0));
  CHECK(set.contains(8));
  CHECK_FALSE(set.contains(2));
  CHECK(code_of([&] { (void)set.at(2); }) == ErrorCode::missing_component);

  std::vector<std::uint32_t> unknown{4, 12};
  CHECK(code_of([&] { masks_from_scores(unknown, scores, probes, 0.2); }) == ErrorCode::missing_component);
  std::vector<double> short_scores{0.1};
  CHECK(code_of([&] { masks_from_scores(layers, short_scores, probes, 0.2); }) == ErrorCode::dimension_mismatch);

  auto full = full_masks(layers, 10);
  for (const auto& m : full.layers) CHECK(m.retained() == 10);
  CHECK(mask_csv(set) == "layer,standalone_ndcg,alpha,p_ratio,retained_pct\n"
                         "4,0.1,0,0.3,30\n8,0.9,1,1,100\n");
}

TEST_CASE("standalone score uses cosine retrieval on probed readouts") {
  auto dump = testing::small_dump(40, 6, 3);
  const auto& val = dump.data;
  auto probe = probes::ProbeParams::identity(2, probes::ProbeKind::base, 6);
  const std::size_t ks[] = {5};
  const double expected =
      eval::evaluate_paired(val.layer_matrix(Modality::text, 2), val.layer_matrix(Modality::vision, 2), ks,
                            eval::Similarity::cosine)
          .mean_ndcg.front();
  CHECK(standalone_layer_ndcg(val, 2, probe) == doctest::Approx(expected));
  const double to_final =
      eval::evaluate_paired(val.layer_matrix(Modality::text, 2), val.anchors(Modality::vision), ks,
                            eval::Similarity::cosine)
          .mean_ndcg.front();
  CHECK(standalone_layer_ndcg(val, 2, probe, 5, StandaloneTarget::final_anchors) == doctest::Approx(to_final));
  CHECK(code_of([&] { standalone_layer_ndcg(val, 4, probe); }) == ErrorCode::invalid_argument);

  std::map<std::uint32_t, probes::ProbeParams> by_layer{{2, probe}};
  std::vector<std::uint32_t> layers{2};
  auto set = build_mask_set(val, layers, by_layer, 0.2);
  CHECK(set.at(2).standalone_ndcg == doctest::Approx(expected));
  CHECK(set.at(2).alpha == 1.0);
}

TEST_CASE("mask set json round trip and errors") {
  MaskSet set;
  set.rho = 0.25;
  set.layers.push_back({3, 0.5, 0.75, 0.8125, {1, 0, 1, 1}});
  auto back = decode_mask_set(encode_mask_set(set));
  CHECK(back.rho == 0.25);
  REQUIRE(back.layers.size() == 1);
  CHECK(back.layers[0].layer == 3);
  CHECK(back.layers[0].p_ratio == 0.8125);
  CHECK(back.layers[0].mask == set.layers[0].mask);
  CHECK(code_of([] { decode_mask_set("{\"rho\": 0.2, \"layers\": [{\"layer\": 1}]}"); }) == ErrorCode::parse_error);
  CHECK(code_of([] {
          decode_mask_set("{\"rho\":0.2,\"layers\":[{\"layer\":1,\"standalone_ndcg\":0,\"alpha\":1,"
                          "\"p_ratio\":1,\"mask\":\"10x\"}]}");
        }) == ErrorCode::parse_error);
}
