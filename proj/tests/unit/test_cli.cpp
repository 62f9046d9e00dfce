// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"

namespace fs = std::filesystem;
using miner::cli::run;

namespace {

const char* kQuickConfig = R"({
  "probe": {"learning_rate": 0.1, "batch_size": 64, "l1_lambda": 1e-4, "epochs": 3},
  "fusion": {"learning_rate": 0.01, "batch_size": 256, "epochs": 3},
  "tau_cka": 0.0
})";

struct Workspace {
  fs::path dir;
  std::string out;
  std::string config;

  explicit Workspace(const char* name) : dir(fs::temp_directory_path() / name) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    out = (dir / "out").string();
    config = (dir / "run.json").string();
    write(config, kQuickConfig);
  }
  ~Workspace() { fs::remove_all(dir); }

  static void write(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

  int stage(const std::string& name, std::vector<std::string> extra = {}) const {
    std::vector<std::string> args{"miner", name, "--config", config, "--out", out};
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  }

  int synth() const {
    return run({"miner", "synth", "--task", "rotation", "--n-pairs", "300", "--dim", "8", "--out", out});
  }

  std::string read(const std::string& rel) const {
    std::ifstream in(fs::path(out) / rel, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
};

}  // namespace

TEST_CASE("full stage sequence writes every artifact") {
  Workspace ws("miner_test_cli_full");
  REQUIRE(ws.synth() == 0);
  CHECK(fs::exists(fs::path(ws.out) / "data.lrd"));
  CHECK(fs::exists(fs::path(ws.out) / "data.manifest.json"));
  REQUIRE(ws.stage("diagnose", {"--post-probe"}) == 0);
  REQUIRE(ws.stage("probe") == 0);
  REQUIRE(ws.stage("mask") == 0);
  REQUIRE(ws.stage("fuse") == 0);
  REQUIRE(ws.stage("eval") == 0);
  REQUIRE(ws.stage("bench", {"--repetitions", "1", "--tokens", "10"}) == 0);

  for (const char* f : {"diagnostics.csv", "diagnostics_post_probe.csv", "selection.json", "probe_loss_base.csv",
                        "probe_loss_norm.csv", "masks.json", "masks.csv", "fusion_loss.csv", "plan/plan.json",
                        "plan/head.fuse", "eval.csv", "run.trec", "qrels.txt", "eff.csv", "run_manifest.json",
                        "run_config.json", "stamps/diagnose.json", "stamps/fuse.json"}) {
    INFO(f);
    CHECK(fs::exists(fs::path(ws.out) / f));
  }
  CHECK(ws.read("diagnostics.csv").rfind("layer,cka,cka_norm,cos_mean,ar,ar_norm,delta_ar_norm\n", 0) == 0);
  CHECK(ws.read("eval.csv").rfind("metric,baseline,miner,delta,t,p\n", 0) == 0);
  CHECK(ws.read("fusion_loss.csv").rfind("epoch,loss\n", 0) == 0);
  CHECK(ws.read("run_manifest.json").find("\"config_hash\"") != std::string::npos);

  // --k narrows evaluation to one cutoff.
  REQUIRE(ws.stage("eval", {"--k", "3"}) == 0);
  CHECK(ws.read("eval.csv").find("ndcg@3,") != std::string::npos);
  CHECK(ws.read("eval.csv").find("ndcg@10,") == std::string::npos);
  REQUIRE(ws.stage("eval", {"--identity"}) == 0);
}

TEST_CASE("stages out of order exit with 4") {
  Workspace ws("miner_test_cli_order");
  REQUIRE(ws.synth() == 0);
  CHECK(ws.stage("probe") == 4);
  REQUIRE(ws.stage("diagnose") == 0);
  CHECK(ws.stage("mask") == 4);
  REQUIRE(ws.stage("probe") == 0);
  // An upstream knob changed since diagnose ran.
  CHECK(ws.stage("mask", {"--tau-cka", "0.3"}) == 4);
  CHECK(ws.stage("mask", {"--seed", "8"}) == 4);
  // A downstream knob leaves upstream stamps valid.
  CHECK(ws.stage("mask", {"--rho", "0.4"}) == 0);
  CHECK(ws.stage("fuse") == 4);
  REQUIRE(ws.stage("mask") == 0);
  REQUIRE(ws.stage("fuse") == 0);
  // Regenerating the dump invalidates everything downstream.
  REQUIRE(run({"miner", "synth", "--task", "rotation", "--n-pairs", "300", "--dim", "8", "--seed", "5", "--out", ws.out}) == 0);
  CHECK(ws.stage("eval") == 4);
}

TEST_CASE("configuration errors exit with 2") {
  Workspace ws("miner_test_cli_config");
  REQUIRE(ws.synth() == 0);
  CHECK(run({"miner"}) == 2);
  CHECK(run({"miner", "frobnicate"}) == 2);
  CHECK(ws.stage("diagnose", {"--bogus"}) == 2);
  CHECK(ws.stage("diagnose", {"--variant", "most"}) == 2);
  CHECK(ws.stage("diagnose", {"--tau-cka", "7"}) == 2);
  CHECK(ws.stage("eval", {"--k", "0"}) == 2);
  Workspace::write(ws.config, R"({"probe": {"lr": 1}})");
  CHECK(ws.stage("diagnose") == 2);
  Workspace::write(ws.config, "{broken");
  CHECK(ws.stage("diagnose") == 2);
  CHECK(run({"miner", "diagnose", "--config", (ws.dir / "absent.json").string(), "--out", ws.out}) == 2);
  CHECK(run({"miner", "synth", "--task", "spiral", "--out", ws.out}) == 2);
  CHECK(run({"miner", "--help"}) == 0);
}

TEST_CASE("data errors exit with 3") {
  Workspace ws("miner_test_cli_data");
  CHECK(ws.stage("diagnose") == 3);
  REQUIRE(ws.synth() == 0);
  {
    std::ofstream f(fs::path(ws.out) / "data.lrd", std::ios::binary | std::ios::app);
    f << "junk";
  }
  CHECK(ws.stage("diagnose") == 3);
  Workspace::write((fs::path(ws.out) / "data.lrd").string(), "XXXX");
  CHECK(ws.stage("diagnose") == 3);
}
