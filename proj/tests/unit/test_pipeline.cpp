// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <set>

#include <json.hpp>

#include "fixtures.hpp"
#include "miner/binary_io.hpp"
#include "miner/error.hpp"
#include "miner/pipeline.hpp"

using namespace miner;
using namespace miner::pipeline;
namespace fs = std::filesystem;

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

fs::path scratch_dir(const char* name) {
  auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small enough to train in well under a second.
RunConfig quick_config() {
  auto cfg = testing::desk_run_config(7);
  cfg.probe.epochs = 3;
  cfg.fusion.epochs = 3;
  cfg.tau_cka = 0.0;
  cfg.k_base = 1;
  return cfg;
}

}  // namespace

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
  CHECK(hex64(0xabcULL) == "0000000000000abc");
}

TEST_CASE("run config parsing") {
  auto cfg = parse_run_config(R"({"seed": 9, "rho": 0.3, "variant": "all_base",
      "probe": {"learning_rate": 0.5}, "fusion": {"seed": 4}, "paths": {"dump": "d.lrd"}})");
  CHECK(cfg.seed == 9);
  CHECK(cfg.rho == 0.3);
  CHECK(cfg.variant == fusion::Variant::all_base);
  CHECK(cfg.probe.learning_rate == 0.5);
  CHECK(cfg.probe.seed == 9);
  CHECK(cfg.probe.batch_size == TrainConfig::probe_defaults().batch_size);
  CHECK(cfg.fusion.seed == 4);
  CHECK(cfg.fusion.learning_rate == TrainConfig::fusion_defaults().learning_rate);
  CHECK(cfg.dump_path == "d.lrd");

  auto back = parse_run_config(run_config_json(cfg));
  CHECK(run_config_json(back) == run_config_json(cfg));
  CHECK(config_hash(back) == config_hash(cfg));

  CHECK(code_of([] { parse_run_config(R"({"rh0": 0.2})"); }) == ErrorCode::parse_error);
  CHECK(code_of([] { parse_run_config(R"({"probe": {"lr": 0.2}})"); }) == ErrorCode::parse_error);
  CHECK(code_of([] { parse_run_config(R"({"paths": {"input": "x"}})"); }) == ErrorCode::parse_error);
  CHECK(code_of([] { parse_run_config(R"({"sweep": {"tau": "high"}})"); }) == ErrorCode::parse_error);
  CHECK(code_of([] { parse_run_config(R"({"gain": "cubic"})"); }) == ErrorCode::parse_error);
  CHECK(code_of([] { parse_run_config(R"({"variant": "most"})"); }) == ErrorCode::parse_error);
  CHECK(code_of([] { parse_run_config(R"([1, 2])"); }) == ErrorCode::parse_error);
  CHECK(code_of([] { parse_run_config(R"({"tau_cka": 1.5})"); }) == ErrorCode::invalid_argument);
  CHECK(code_of([] { parse_run_config(R"({"eval_ks": []})"); }) == ErrorCode::invalid_argument);
  CHECK(code_of([] { parse_run_config(R"({"probe": {"batch_size": 1}})"); }) == ErrorCode::invalid_argument);
}

TEST_CASE("config hash ignores paths and tracks every other field") {
  RunConfig a;
  RunConfig b = a;
  b.dump_path = "elsewhere.lrd";
  b.out_dir = "out2";
  CHECK(config_hash(a) == config_hash(b));
  b.fusion.learning_rate = 0.5;
  CHECK(config_hash(a) != config_hash(b));
  CHECK(config_hash(a).size() == 16);
}

TEST_CASE("three-way splits are disjoint and cover every pair") {
  auto dump = testing::small_dump(100, 3, 2);
  RunConfig cfg;
  auto s = make_splits(dump, cfg);
  CHECK(s.train.data.n_pairs == 80);
  CHECK(s.val.data.n_pairs == 10);
  CHECK(s.test.data.n_pairs == 10);
  CHECK(s.val.data.split == SplitTag::val);
  CHECK(s.test.data.split == SplitTag::test);
  std::set<std::string> ids;
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (const auto& id : part->manifest.pair_ids) CHECK(ids.insert(id).second);
  CHECK(ids.size() == 100);
  auto again = make_splits(dump, cfg);
  CHECK(again.test.manifest.pair_ids == s.test.manifest.pair_ids);
}

TEST_CASE("probe jobs follow the variant") {
  auto sel = diagnostics::partition({2, 4, 6}, 0.5, 2);
  auto jobs = probe_jobs(sel, fusion::Variant::full);
  REQUIRE(jobs.size() == 3);
  CHECK(jobs[0] == probes::ProbeJob{2, probes::ProbeKind::norm});
  CHECK(jobs[1] == probes::ProbeJob{4, probes::ProbeKind::base});
  auto norm = probe_jobs(sel, fusion::Variant::all_norm);
  for (const auto& j : norm) CHECK(j.kind == probes::ProbeKind::norm);
  auto dump = testing::small_dump(10, 3, 1);
  CHECK(all_probe_jobs(dump.data).size() == 6);
}

TEST_CASE("post-probe report with identity probes equals the raw report") {
  auto dump = testing::small_dump(40, 4, 3);
  fusion::ProbePool pool;
  for (auto l : dump.data.layers)
    pool.emplace(std::make_pair(l, probes::ProbeKind::norm), probes::ProbeParams::identity(l, probes::ProbeKind::norm, 4));
  auto raw = diagnostics::compute_report(dump.data);
  auto post = post_probe_report(dump.data, pool, probes::ProbeKind::norm);
  for (std::size_t i = 0; i < raw.layers.size(); ++i) CHECK(post.layers[i].cka == doctest::Approx(raw.layers[i].cka));
  CHECK(code_of([&] { post_probe_report(dump.data, pool, probes::ProbeKind::base); }) == ErrorCode::missing_component);
}

TEST_CASE("end-to-end run and persistence") {
  auto dump = synth::generate(synth::rotation_task(4, 400, 8));
  auto cfg = quick_config();
  auto result = run_pipeline(dump, cfg);
  CHECK(result.selection.s_cand == std::vector<std::uint32_t>{4, 8, 12});
  CHECK(result.selection.s_base == std::vector<std::uint32_t>{12});
  CHECK(result.probes.size() == 3);
  CHECK(result.probe_trace.size() == 9);
  CHECK(result.fusion_trace.size() == 3);
  REQUIRE(result.comparison.rows.size() == 3);
  CHECK(result.comparison.rows[0].metric == "ndcg@5");
  CHECK(result.comparison.rows[2].metric == "top1");
  CHECK(comparison_csv(result.comparison).rfind("metric,baseline,miner,delta,t,p\nndcg@5,", 0) == 0);

  auto dir = scratch_dir("miner_test_pipeline");
  save_plan(dir / "plan", result.plan);
  auto loaded = load_plan(dir / "plan");
  CHECK(loaded.head.u == result.plan.head.u);
  CHECK(loaded.selection.s_cand == result.plan.selection.s_cand);
  const auto splits = make_splits(dump, cfg);
  CHECK(fusion::embed_all(splits.test.data, Modality::text, loaded) ==
        fusion::embed_all(splits.test.data, Modality::text, result.plan));

  save_probe_pool(dir / "pool", result.probes);
  auto pool = load_probe_pool(dir / "pool");
  REQUIRE(pool.size() == result.probes.size());
  for (const auto& [key, p] : result.probes) CHECK(pool.at(key).p == p.p);

  // A missing head file is an I/O failure, a corrupt one a codec failure.
  fs::remove(dir / "plan" / "head.fuse");
  CHECK(code_of([&] { load_plan(dir / "plan"); }) == ErrorCode::io_error);
  io::write_file_text(dir / "plan" / "head.fuse", "MFU1");
  CHECK(code_of([&] { load_plan(dir / "plan"); }) == ErrorCode::truncated);
  fs::remove_all(dir);
}

TEST_CASE("selection json") {
  auto sel = diagnostics::partition({3, 5, 7, 9}, 0.6, 3);
  auto back = parse_selection(selection_json(sel));
  CHECK(back.s_cand == sel.s_cand);
  CHECK(back.s_base == sel.s_base);
  CHECK(back.tau_cka == 0.6);
  auto doc = nlohmann::json::parse(selection_json(sel));
  doc["s_base"] = {3};
  CHECK(code_of([&] { parse_selection(doc.dump()); }) == ErrorCode::manifest_mismatch);
  CHECK(code_of([] { parse_selection("{}"); }) == ErrorCode::parse_error);
}

TEST_CASE("sweep rows and csv") {
  auto dump = synth::generate(synth::rotation_task(6, 300, 8));
  auto cfg = quick_config();
  cfg.tau_cka = 0.5;
  cfg.sweep_tau = {0.0, 1.0};
  cfg.sweep_rho = {0.5};
  auto rows = run_sweep(dump, cfg);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].n_candidates == 3);
  CHECK(rows[2].rho == 0.5);
  for (const auto& r : rows) CHECK(r.n_candidates >= 1);
  std::vector<SweepRow> manual{{0.5, 0.2, {4, 8, 12}, 3, 0.5, 0.25, 100.0}, {0.9, 0.2, {}, 0, 0.0, 0.0, 0.0}};
  CHECK(sweep_csv(manual) ==
        "tau_cka,rho,s_cand,n_candidates,top1,ndcg@5,top1_rel_pct\n0.5,0.2,4-12,3,0.5,0.25,100\n0.9,0.2,,0,0,0,0\n");
}
