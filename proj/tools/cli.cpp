// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>

#include "miner/binary_io.hpp"
#include "miner/error.hpp"
#include "miner/format.hpp"
#include "miner/pipeline.hpp"
#include "miner/synth.hpp"

namespace miner::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using pipeline::RunConfig;

constexpr const char* kToolVersion = "0.1.0";

class StageOrderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string config;
  std::string dump;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<double> tau_cka;
  std::optional<double> rho;
  std::optional<std::string> variant;
  std::optional<std::size_t> k;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "Run config (JSON)");
  cmd->add_option("--dump", o.dump, "Input .lrd dump (default: <out>/data.lrd)");
  cmd->add_option("--out", o.out, "Artifact directory");
  cmd->add_option("--seed", o.seed, "Global seed (splits and training)");
  cmd->add_option("--tau-cka", o.tau_cka, "Normalized CKA cutoff");
  cmd->add_option("--rho", o.rho, "Mask retention floor");
  cmd->add_option("--variant", o.variant, "full | all_neurons | all_base | all_norm")
      ->check(CLI::IsMember({"full", "all_neurons", "all_base", "all_norm"}));
  cmd->add_option("--k", o.k, "Evaluate nDCG at this cutoff only")->check(CLI::PositiveNumber);
}

RunConfig load_config(const CommonOptions& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : pipeline::parse_run_config(io::read_file_text(o.config));
  if (o.seed) cfg.with_seed(*o.seed);
  if (o.tau_cka) cfg.tau_cka = *o.tau_cka;
  if (o.rho) cfg.rho = *o.rho;
  if (o.variant) cfg.variant = fusion::parse_variant(*o.variant);
  if (o.k) cfg.eval_ks = {*o.k};
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (cfg.out_dir.empty()) cfg.out_dir = "miner_out";
  if (!o.dump.empty()) cfg.dump_path = o.dump;
  if (cfg.dump_path.empty()) cfg.dump_path = (fs::path(cfg.out_dir) / "data.lrd").string();
  cfg.validate();
  return cfg;
}

// ---- stage stamps ----------------------------------------------------------

const std::vector<std::pair<std::string, std::vector<std::string>>>& stage_keys() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> keys = {
      {"diagnose", {"seed", "train_fraction", "val_fraction", "center", "tau_cka", "k_base"}},
      {"probe", {"probe", "variant"}},
      {"mask", {"rho", "mask_k", "standalone_target"}},
      {"fuse", {"fusion"}},
      {"eval", {"eval_ks", "gain"}},
  };
  return keys;
}

// A stage's hash covers its own inputs, every upstream input and the dump.
std::string stage_hash(const std::string& stage, const RunConfig& cfg, const std::string& dump_digest) {
  const auto full = json::parse(pipeline::run_config_json(cfg));
  json picked;
  picked["dump"] = dump_digest;
  for (const auto& [name, keys] : stage_keys()) {
    for (const auto& k : keys) picked[k] = full.at(k);
    if (name == stage) return pipeline::hex64(pipeline::fnv1a64(picked.dump()));
  }
  throw std::logic_error("unknown stage " + stage);
}

fs::path stamp_path(const RunConfig& cfg, const std::string& stage) {
  return fs::path(cfg.out_dir) / "stamps" / (stage + ".json");
}

void write_stamp(const RunConfig& cfg, const std::string& stage, const std::string& dump_digest) {
  json j{{"stage", stage}, {"hash", stage_hash(stage, cfg, dump_digest)}};
  io::write_file_text(stamp_path(cfg, stage), j.dump(2) + "\n");
}

void require_stamp(const RunConfig& cfg, const std::string& upstream, const std::string& dump_digest) {
  const auto path = stamp_path(cfg, upstream);
  if (!fs::exists(path)) throw StageOrderError("`" + upstream + "` has not been run in " + cfg.out_dir);
  json j;
  try {
    j = json::parse(io::read_file_text(path));
  } catch (const json::exception&) {
    throw StageOrderError("unreadable stamp " + path.string());
  }
  if (j.value("hash", std::string{}) != stage_hash(upstream, cfg, dump_digest)) {
    throw StageOrderError("`" + upstream + "` artifacts were produced with a different config or dump; rerun it");
  }
}

std::string dump_digest(const fs::path& lrd) {
  const auto bytes = io::read_file_bytes(lrd);
  const auto manifest = io::read_file_text(manifest_path_for(lrd));
  const std::string_view payload(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  return pipeline::hex64(pipeline::fnv1a64(payload) ^ (pipeline::fnv1a64(manifest) * 0x9E3779B97F4A7C15ULL));
}

void write_manifest(const RunConfig& cfg, const std::string& stage, const std::string& digest) {
  const auto path = fs::path(cfg.out_dir) / "run_manifest.json";
  json m = json::object();
  if (fs::exists(path)) {
    try {
      m = json::parse(io::read_file_text(path));
    } catch (const json::exception&) {
      m = json::object();
    }
  }
  m["tool_version"] = kToolVersion;
  m["artifact_versions"] = {{"lrd", 1}, {"probe", "MPR1"}, {"head", "MFU1"}, {"masks", 1}};
  m["stages"][stage] = {{"config_hash", pipeline::config_hash(cfg)}, {"seed", cfg.seed}, {"dump", digest}};
  m["config_hash"] = pipeline::config_hash(cfg);
  m["seed"] = cfg.seed;
  io::write_file_text(path, m.dump(2) + "\n");
  io::write_file_text(fs::path(cfg.out_dir) / "run_config.json", pipeline::run_config_json(cfg));
}

fs::path out_file(const RunConfig& cfg, const std::string& name) { return fs::path(cfg.out_dir) / name; }

struct Loaded {
  Dump dump;
  std::string digest;
  pipeline::Splits splits;
};

Loaded load_inputs(const RunConfig& cfg) {
  Loaded l;
  l.dump = load_dump(cfg.dump_path);
  l.digest = dump_digest(cfg.dump_path);
  l.splits = pipeline::make_splits(l.dump, cfg);
  return l;
}

diagnostics::LayerSelection load_selection(const RunConfig& cfg) {
  return pipeline::parse_selection(io::read_file_text(out_file(cfg, "selection.json")));
}

std::string fusion_trace_csv(const std::vector<probes::LossRecord>& trace) {
  std::string out = "epoch,loss\n";
  for (const auto& r : trace) out += std::to_string(r.epoch) + "," + fmt_real(r.loss) + "\n";
  return out;
}

// ---- subcommands -----------------------------------------------------------

struct SynthOptions {
  std::string config;
  std::string task = "planted";
  std::string out = "miner_out";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n_pairs;
  std::optional<std::size_t> dim;
};

int cmd_synth(const SynthOptions& o) {
  synth::SynthConfig sc;
  const std::uint64_t seed = o.seed.value_or(42);
  if (!o.config.empty()) {
    sc = synth::parse_config(io::read_file_text(o.config));
    if (o.seed) sc.seed = *o.seed;
  } else if (o.task == "planted") {
    sc = synth::planted_signal_task(seed);
  } else if (o.task == "rotation") {
    sc = synth::rotation_task(seed);
  } else {
    throw Error(ErrorCode::invalid_argument, "unknown task '" + o.task + "' (planted | rotation)");
  }
  if (o.n_pairs) sc.n_pairs = *o.n_pairs;
  if (o.dim) sc.dim = *o.dim;
  sc.validate();
  const auto dump = synth::generate(sc);
  const auto lrd = fs::path(o.out) / "data.lrd";
  save_dump(lrd, dump);
  io::write_file_text(fs::path(o.out) / "synth_config.json", synth::config_json(sc));
  std::cout << "synth: wrote " << lrd.string() << " (N=" << sc.n_pairs << ", D=" << sc.dim
            << ", layers=" << sc.layers.size() << ")\n";
  return kOk;
}

int cmd_diagnose(const RunConfig& cfg, bool post_probe) {
  auto in = load_inputs(cfg);
  const auto report = diagnostics::compute_report(in.splits.val.data, cfg.center);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  io::write_file_text(out_file(cfg, "diagnostics.csv"), diagnostics::report_csv(report));
  const auto sel = diagnostics::select_candidates(report, cfg.tau_cka, cfg.k_base);
  io::write_file_text(out_file(cfg, "selection.json"), pipeline::selection_json(sel));
  if (post_probe) {
    std::vector<probes::ProbeJob> jobs;
    for (auto l : in.splits.train.data.layers) jobs.push_back({l, cfg.post_probe_kind});
    const auto pool = pipeline::train_probe_pool(in.splits.train.data, jobs, cfg.probe);
    const auto after = pipeline::post_probe_report(in.splits.val.data, pool, cfg.post_probe_kind, cfg.center);
    io::write_file_text(out_file(cfg, "diagnostics_post_probe.csv"), diagnostics::report_csv(after));
  }
  write_stamp(cfg, "diagnose", in.digest);
  write_manifest(cfg, "diagnose", in.digest);
  std::cout << "diagnose: " << sel.s_cand.size() << " candidate layers, " << sel.s_base.size() << " base, "
            << sel.s_norm.size() << " norm\n";
  return kOk;
}

int cmd_probe(const RunConfig& cfg) {
  auto in = load_inputs(cfg);
  require_stamp(cfg, "diagnose", in.digest);
  const auto sel = load_selection(cfg);
  const auto jobs = pipeline::probe_jobs(sel, cfg.variant);
  std::vector<probes::LossRecord> trace;
  const auto pool = pipeline::train_probe_pool(in.splits.train.data, jobs, cfg.probe, &trace);
  const auto dir = out_file(cfg, "probes");
  fs::remove_all(dir);
  pipeline::save_probe_pool(dir, pool);
  for (auto kind : {probes::ProbeKind::base, probes::ProbeKind::norm}) {
    std::vector<probes::LossRecord> part;
    for (const auto& r : trace) {
      if (r.tag == probes::to_string(kind)) part.push_back(r);
    }
    io::write_file_text(out_file(cfg, std::string("probe_loss_") + probes::to_string(kind) + ".csv"),
                        probes::loss_trace_csv(part));
  }
  write_stamp(cfg, "probe", in.digest);
  write_manifest(cfg, "probe", in.digest);
  std::cout << "probe: trained " << jobs.size() << " probes\n";
  return kOk;
}

int cmd_mask(const RunConfig& cfg) {
  auto in = load_inputs(cfg);
  require_stamp(cfg, "probe", in.digest);
  const auto sel = load_selection(cfg);
  const auto pool = pipeline::load_probe_pool(out_file(cfg, "probes"));
  masking::MaskSet masks;
  if (cfg.variant == fusion::Variant::all_neurons) {
    masks = masking::full_masks(sel.s_cand, in.dump.data.dim);
    masks.rho = cfg.rho;
  } else {
    masks = pipeline::build_masks(in.splits.val.data, sel, pool, cfg.variant, cfg);
  }
  io::write_file_text(out_file(cfg, "masks.json"), masking::encode_mask_set(masks));
  io::write_file_text(out_file(cfg, "masks.csv"), masking::mask_csv(masks));
  write_stamp(cfg, "mask", in.digest);
  write_manifest(cfg, "mask", in.digest);
  std::cout << "mask: " << masks.layers.size() << " layer masks\n";
  return kOk;
}

int cmd_fuse(const RunConfig& cfg) {
  auto in = load_inputs(cfg);
  require_stamp(cfg, "mask", in.digest);
  const auto sel = load_selection(cfg);
  const auto pool = pipeline::load_probe_pool(out_file(cfg, "probes"));
  auto masks = masking::decode_mask_set(io::read_file_text(out_file(cfg, "masks.json")));
  const auto& train = in.splits.train.data;
  if (!std::count(sel.s_cand.begin(), sel.s_cand.end(), train.final_layer)) {
    std::cerr << "warning: final layer " << train.final_layer
              << " is not a candidate; the head warm-starts on the deepest candidate\n";
  }
  auto head = fusion::FusionHead::warm_start(sel.s_cand, train.final_layer, train.dim);
  auto plan = fusion::assemble_plan(cfg.variant, sel, pool, std::move(masks), std::move(head));
  auto trained = fusion::train_fusion(train, plan, cfg.fusion);
  plan.head = std::move(trained.head);
  const auto dir = out_file(cfg, "plan");
  fs::remove_all(dir);
  pipeline::save_plan(dir, plan);
  io::write_file_text(out_file(cfg, "fusion_loss.csv"), fusion_trace_csv(trained.trace));
  write_stamp(cfg, "fuse", in.digest);
  write_manifest(cfg, "fuse", in.digest);
  std::cout << "fuse: final loss " << fmt_real(trained.trace.back().loss) << "\n";
  return kOk;
}

std::string run_lines(const Matrix& q, const Matrix& d, std::size_t k,
                      const std::string& tag) {
  std::string out;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const Vector scores = d * q.row(i).transpose();
    const auto top = eval::top_k_indices(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), k);
    for (std::size_t rank = 0; rank < top.size(); ++rank) {
      out += "q" + std::to_string(i) + " Q0 d" + std::to_string(top[rank]) + " " + std::to_string(rank + 1) + " " +
             fmt_real(scores(static_cast<Eigen::Index>(top[rank]))) + " " + tag + "\n";
    }
  }
  return out;
}

int cmd_eval(const RunConfig& cfg, bool identity) {
  auto in = load_inputs(cfg);
  const auto& test = in.splits.test.data;
  fusion::PipelinePlan plan;
  if (identity) {
    plan = fusion::identity_plan(test.final_layer, test.dim);
  } else {
    require_stamp(cfg, "fuse", in.digest);
    plan = pipeline::load_plan(out_file(cfg, "plan"));
  }
  const auto cmp = pipeline::compare_to_baseline(test, plan, cfg);
  io::write_file_text(out_file(cfg, "eval.csv"), pipeline::comparison_csv(cmp));
  const Matrix q = fusion::embed_all(test, Modality::text, plan);
  const Matrix d = fusion::embed_all(test, Modality::vision, plan);
  std::size_t kmax = 1;
  for (auto k : cfg.eval_ks) kmax = std::max(kmax, k);
  io::write_file_text(out_file(cfg, "run.trec"), run_lines(q, d, kmax, identity ? "identity" : "miner"));
  std::string qrels;
  for (std::size_t i = 0; i < test.n_pairs; ++i) qrels += "q" + std::to_string(i) + " 0 d" + std::to_string(i) + " 1\n";
  io::write_file_text(out_file(cfg, "qrels.txt"), qrels);
  if (!identity) write_stamp(cfg, "eval", in.digest);
  write_manifest(cfg, "eval", in.digest);
  for (const auto& r : cmp.rows) {
    std::cout << r.metric << ": baseline " << fmt_real(r.baseline) << ", miner " << fmt_real(r.miner) << " (t "
              << r.ttest.t_string() << ", p " << fmt_real(r.ttest.p) << ")\n";
  }
  return kOk;
}

struct BenchOptions {
  std::size_t tokens = 100;
  std::size_t query_tokens = 16;
  std::size_t repetitions = 3;
  bool identity = false;
};

int cmd_bench(const RunConfig& cfg, const BenchOptions& b) {
  auto in = load_inputs(cfg);
  const auto& test = in.splits.test.data;
  fusion::PipelinePlan plan;
  if (b.identity) {
    plan = fusion::identity_plan(test.final_layer, test.dim);
  } else {
    require_stamp(cfg, "fuse", in.digest);
    plan = pipeline::load_plan(out_file(cfg, "plan"));
  }
  const Matrix q = fusion::embed_all(test, Modality::text, plan);
  const Matrix d = fusion::embed_all(test, Modality::vision, plan);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < test.n_pairs; ++i) ids.push_back("d" + std::to_string(i));
  eval::DenseIndex dense(d, ids);

  // Token-level stand-in for a late-interaction index: each document and
  // query expands into jittered copies of its single vector.
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> jitter(0.0, 0.05);
  auto expand = [&](const Vector& v, std::size_t n) {
    Matrix t(static_cast<Eigen::Index>(n), v.size());
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = v(c) + jitter(rng);
    }
    return t;
  };
  eval::MultiVectorIndex multi(test.dim);
  for (std::size_t i = 0; i < test.n_pairs; ++i) multi.add(ids[i], expand(d.row(static_cast<Eigen::Index>(i)).transpose(), b.tokens));
  std::vector<Matrix> q_tokens;
  for (Eigen::Index i = 0; i < q.rows(); ++i) q_tokens.push_back(expand(q.row(i).transpose(), b.query_tokens));

  eval::BenchOptions opts;
  opts.repetitions = b.repetitions;
  opts.k = 10;
  std::vector<eval::EffReport> reports;
  reports.push_back(eval::latency_bench(dense, q, opts, "dense"));
  reports.push_back(eval::latency_bench(multi, q_tokens, opts, "maxsim"));
  io::write_file_text(out_file(cfg, "eff.csv"), eval::eff_report_csv(reports));
  write_manifest(cfg, "bench", in.digest);
  std::cout << "bench: dense " << fmt_real(reports[0].qps) << " qps, maxsim " << fmt_real(reports[1].qps)
            << " qps, storage ratio "
            << fmt_real(eval::storage_ratio(static_cast<double>(reports[1].storage_bytes),
                                            static_cast<double>(reports[0].storage_bytes)))
            << "\n";
  return kOk;
}

int cmd_sweep(const RunConfig& cfg) {
  auto in = load_inputs(cfg);
  const auto rows = pipeline::run_sweep(in.dump, cfg);
  io::write_file_text(out_file(cfg, "sweep.csv"), pipeline::sweep_csv(rows));
  write_manifest(cfg, "sweep", in.digest);
  std::cout << "sweep: " << rows.size() << " grid points\n";
  return kOk;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument:
    case ErrorCode::parse_error:
    case ErrorCode::variant_mismatch:
      return kConfigError;
    default:
      return kDataError;
  }
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Layerwise readout mining for single-vector retrieval"};
  app.require_subcommand(1);

  SynthOptions synth_opts;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dump");
  synth_cmd->add_option("--config", synth_opts.config, "Synth config (JSON)");
  synth_cmd->add_option("--task", synth_opts.task, "Built-in task when no config is given")
      ->check(CLI::IsMember({"planted", "rotation"}));
  synth_cmd->add_option("--out", synth_opts.out, "Output directory");
  synth_cmd->add_option("--seed", synth_opts.seed, "Generator seed");
  synth_cmd->add_option("--n-pairs", synth_opts.n_pairs, "Override pair count");
  synth_cmd->add_option("--dim", synth_opts.dim, "Override dimension");

  CommonOptions common;
  bool post_probe = false;
  bool identity = false;
  BenchOptions bench_opts;

  auto* diagnose_cmd = app.add_subcommand("diagnose", "Layerwise CKA / alignment-ratio report");
  add_common(diagnose_cmd, common);
  diagnose_cmd->add_flag("--post-probe", post_probe, "Also report diagnostics on probed readouts");
  auto* probe_cmd = app.add_subcommand("probe", "Train probes on the candidate layers");
  add_common(probe_cmd, common);
  auto* mask_cmd = app.add_subcommand("mask", "Build neuron masks");
  add_common(mask_cmd, common);
  auto* fuse_cmd = app.add_subcommand("fuse", "Train the fusion head");
  add_common(fuse_cmd, common);
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate against the final-layer baseline");
  add_common(eval_cmd, common);
  eval_cmd->add_flag("--identity", identity, "Evaluate the identity plan instead of the trained plan");
  auto* bench_cmd = app.add_subcommand("bench", "Storage and latency report");
  add_common(bench_cmd, common);
  bench_cmd->add_option("--tokens", bench_opts.tokens, "Tokens per document in the multi-vector index");
  bench_cmd->add_option("--query-tokens", bench_opts.query_tokens, "Tokens per query");
  bench_cmd->add_option("--repetitions", bench_opts.repetitions, "Timed passes over the queries");
  bench_cmd->add_flag("--identity", bench_opts.identity, "Benchmark the identity plan");
  auto* sweep_cmd = app.add_subcommand("sweep", "Sensitivity sweep over tau_cka and rho");
  add_common(sweep_cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(synth_opts);
    RunConfig cfg;
    try {
      cfg = load_config(common);
    } catch (const Error& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return kConfigError;
    }
    if (diagnose_cmd->parsed()) return cmd_diagnose(cfg, post_probe);
    if (probe_cmd->parsed()) return cmd_probe(cfg);
    if (mask_cmd->parsed()) return cmd_mask(cfg);
    if (fuse_cmd->parsed()) return cmd_fuse(cfg);
    if (eval_cmd->parsed()) return cmd_eval(cfg, identity);
    if (bench_cmd->parsed()) return cmd_bench(cfg, bench_opts);
    if (sweep_cmd->parsed()) return cmd_sweep(cfg);
  } catch (const StageOrderError& e) {
    std::cerr << "stage order error: " << e.what() << "\n";
    return kStageOrderError;
  } catch (const Error& e) {
    std::cerr << to_string(e.code()) << ": " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kConfigError;
}

int run(const std::vector<std::string>& args) {
  std::vector<std::string> copy = args;
  std::vector<char*> argv;
  for (auto& s : copy) argv.push_back(s.data());
  argv.push_back(nullptr);
  return run(static_cast<int>(copy.size()), argv.data());
}

}  // namespace miner::cli
