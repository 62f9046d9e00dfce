// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#include "miner/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include <json.hpp>

#include "miner/binary_io.hpp"
#include "miner/error.hpp"
#include "miner/format.hpp"

namespace miner::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using probes::ProbeKind;

namespace {

json train_json(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate}, {"batch_size", t.batch_size}, {"epochs", t.epochs},
          {"warmup", t.warmup},               {"weight_decay", t.weight_decay}, {"l1_lambda", t.l1_lambda},
          {"temperature", t.temperature},     {"seed", t.seed},             {"beta1", t.beta1},
          {"beta2", t.beta2},                 {"adam_eps", t.adam_eps}};
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  const std::set<std::string> allowed(known.begin(), known.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) throw Error(ErrorCode::parse_error, "unknown key '" + it.key() + "' in " + where);
  }
}

TrainConfig parse_train(const json& j, TrainConfig t, std::uint64_t global_seed, const std::string& where) {
  t.seed = global_seed;
  if (!j.is_object()) throw Error(ErrorCode::parse_error, where + " must be an object");
  reject_unknown(j,
                 {"learning_rate", "batch_size", "epochs", "warmup", "weight_decay", "l1_lambda", "temperature",
                  "seed", "beta1", "beta2", "adam_eps"},
                 where);
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.epochs = j.value("epochs", t.epochs);
  t.warmup = j.value("warmup", t.warmup);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.l1_lambda = j.value("l1_lambda", t.l1_lambda);
  t.temperature = j.value("temperature", t.temperature);
  t.seed = j.value("seed", t.seed);
  t.beta1 = j.value("beta1", t.beta1);
  t.beta2 = j.value("beta2", t.beta2);
  t.adam_eps = j.value("adam_eps", t.adam_eps);
  return t;
}

const char* target_name(masking::StandaloneTarget t) {
  return t == masking::StandaloneTarget::same_layer ? "same_layer" : "final_anchors";
}

masking::StandaloneTarget parse_target(const std::string& s) {
  if (s == "same_layer") return masking::StandaloneTarget::same_layer;
  if (s == "final_anchors") return masking::StandaloneTarget::final_anchors;
  throw Error(ErrorCode::parse_error, "unknown standalone_target '" + s + "'");
}

}  // namespace

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

RunConfig& RunConfig::with_seed(std::uint64_t s) {
  seed = s;
  probe.seed = s;
  fusion.seed = s;
  return *this;
}

void RunConfig::validate() const {
  if (!(tau_cka >= 0.0 && tau_cka <= 1.0)) throw Error(ErrorCode::invalid_argument, "tau_cka must lie in [0, 1]");
  if (!(rho >= 0.0 && rho <= 1.0)) throw Error(ErrorCode::invalid_argument, "rho must lie in [0, 1]");
  if (mask_k == 0) throw Error(ErrorCode::invalid_argument, "mask_k must be >= 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "train_fraction must lie in (0, 1)");
  }
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "val_fraction must lie in (0, 1)");
  }
  if (eval_ks.empty()) throw Error(ErrorCode::invalid_argument, "eval_ks must not be empty");
  for (auto k : eval_ks) {
    if (k == 0) throw Error(ErrorCode::invalid_argument, "eval_ks entries must be >= 1");
  }
  for (double t : sweep_tau) {
    if (!(t >= 0.0 && t <= 1.0)) throw Error(ErrorCode::invalid_argument, "sweep tau outside [0, 1]");
  }
  for (double r : sweep_rho) {
    if (!(r >= 0.0 && r <= 1.0)) throw Error(ErrorCode::invalid_argument, "sweep rho outside [0, 1]");
  }
  probe.validate();
  fusion.validate();
}

RunConfig parse_run_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("run config: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::parse_error, "run config must be a JSON object");
  RunConfig cfg;
  try {
    reject_unknown(j,
                   {"seed", "tau_cka", "k_base", "rho", "mask_k", "variant", "standalone_target", "center",
                    "train_fraction", "val_fraction", "eval_ks", "gain", "post_probe_kind", "probe", "fusion",
                    "sweep", "paths"},
                   "run config");
    if (j.contains("paths")) {
      const auto& p = j["paths"];
      reject_unknown(p, {"dump", "out"}, "paths");
      cfg.dump_path = p.value("dump", cfg.dump_path);
      cfg.out_dir = p.value("out", cfg.out_dir);
    }
    cfg.with_seed(j.value("seed", cfg.seed));
    cfg.tau_cka = j.value("tau_cka", cfg.tau_cka);
    cfg.k_base = j.value("k_base", cfg.k_base);
    cfg.rho = j.value("rho", cfg.rho);
    cfg.mask_k = j.value("mask_k", cfg.mask_k);
    if (j.contains("variant")) cfg.variant = fusion::parse_variant(j["variant"].get<std::string>());
    if (j.contains("standalone_target")) cfg.standalone_target = parse_target(j["standalone_target"].get<std::string>());
    cfg.center = j.value("center", cfg.center);
    cfg.train_fraction = j.value("train_fraction", cfg.train_fraction);
    cfg.val_fraction = j.value("val_fraction", cfg.val_fraction);
    if (j.contains("eval_ks")) cfg.eval_ks = j["eval_ks"].get<std::vector<std::size_t>>();
    if (j.contains("gain")) {
      const auto g = j["gain"].get<std::string>();
      if (g == "exponential") cfg.gain = eval::Gain::exponential;
      else if (g == "linear") cfg.gain = eval::Gain::linear;
      else throw Error(ErrorCode::parse_error, "unknown gain '" + g + "'");
    }
    if (j.contains("post_probe_kind")) cfg.post_probe_kind = probes::parse_probe_kind(j["post_probe_kind"].get<std::string>());
    cfg.probe = parse_train(j.value("probe", json::object()), TrainConfig::probe_defaults(), cfg.seed, "probe");
    cfg.fusion = parse_train(j.value("fusion", json::object()), TrainConfig::fusion_defaults(), cfg.seed, "fusion");
    if (j.contains("sweep")) {
      const auto& s = j["sweep"];
      reject_unknown(s, {"tau", "rho"}, "sweep");
      cfg.sweep_tau = s.value("tau", cfg.sweep_tau);
      cfg.sweep_rho = s.value("rho", cfg.sweep_rho);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("run config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::string run_config_json(const RunConfig& cfg) {
  json j;
  j["paths"] = {{"dump", cfg.dump_path}, {"out", cfg.out_dir}};
  j["seed"] = cfg.seed;
  j["tau_cka"] = cfg.tau_cka;
  j["k_base"] = cfg.k_base;
  j["rho"] = cfg.rho;
  j["mask_k"] = cfg.mask_k;
  j["variant"] = fusion::to_string(cfg.variant);
  j["standalone_target"] = target_name(cfg.standalone_target);
  j["center"] = cfg.center;
  j["train_fraction"] = cfg.train_fraction;
  j["val_fraction"] = cfg.val_fraction;
  j["eval_ks"] = cfg.eval_ks;
  j["gain"] = cfg.gain == eval::Gain::exponential ? "exponential" : "linear";
  j["post_probe_kind"] = probes::to_string(cfg.post_probe_kind);
  j["probe"] = train_json(cfg.probe);
  j["fusion"] = train_json(cfg.fusion);
  j["sweep"] = {{"tau", cfg.sweep_tau}, {"rho", cfg.sweep_rho}};
  return j.dump(2) + "\n";
}

std::string config_hash(const RunConfig& cfg) {
  auto j = json::parse(run_config_json(cfg));
  j.erase("paths");
  return hex64(fnv1a64(j.dump()));
}

Splits make_splits(const Dump& dump, const RunConfig& cfg) {
  auto first = split(dump, cfg.train_fraction, cfg.seed);
  auto second = split(first.val, cfg.val_fraction, cfg.seed + 1);
  Splits s{std::move(first.train), std::move(second.train), std::move(second.val)};
  s.val.data.split = SplitTag::val;
  s.test.data.split = SplitTag::test;
  return s;
}

std::vector<probes::ProbeJob> probe_jobs(const diagnostics::LayerSelection& selection, fusion::Variant variant) {
  std::vector<probes::ProbeJob> jobs;
  for (auto l : selection.s_cand) jobs.push_back({l, fusion::required_kind(variant, selection, l)});
  return jobs;
}

std::vector<probes::ProbeJob> all_probe_jobs(const LayerReadoutDataset& data) {
  std::vector<probes::ProbeJob> jobs;
  for (auto l : data.layers) {
    jobs.push_back({l, ProbeKind::base});
    jobs.push_back({l, ProbeKind::norm});
  }
  return jobs;
}

fusion::ProbePool train_probe_pool(const LayerReadoutDataset& train, std::span<const probes::ProbeJob> jobs,
                                   const TrainConfig& cfg, std::vector<probes::LossRecord>* trace) {
  auto result = probes::train_probes(train, jobs, cfg);
  fusion::ProbePool pool;
  for (std::size_t i = 0; i < jobs.size(); ++i) pool.emplace(std::make_pair(jobs[i].layer, jobs[i].kind), result.probes[i]);
  if (trace) *trace = std::move(result.trace);
  return pool;
}

diagnostics::DiagnosticsReport post_probe_report(const LayerReadoutDataset& data, const fusion::ProbePool& pool,
                                                 ProbeKind kind, bool center) {
  auto stacks = diagnostics::ReadoutStacks::from_dataset(data);
  for (std::size_t i = 0; i < stacks.layers.size(); ++i) {
    auto it = pool.find({stacks.layers[i], kind});
    if (it == pool.end()) {
      throw Error(ErrorCode::missing_component, std::string("post-probe diagnostics need a ") + probes::to_string(kind) +
                                                    " probe at layer " + std::to_string(stacks.layers[i]));
    }
    stacks.text[i] = probes::apply_probe_rows(it->second, stacks.text[i]);
    stacks.vision[i] = probes::apply_probe_rows(it->second, stacks.vision[i]);
  }
  return diagnostics::compute_report(stacks, center);
}

namespace {

std::map<std::uint32_t, probes::ProbeParams> probes_for(const diagnostics::LayerSelection& selection,
                                                        const fusion::ProbePool& pool, fusion::Variant variant) {
  std::map<std::uint32_t, probes::ProbeParams> out;
  for (auto l : selection.s_cand) {
    const auto kind = fusion::required_kind(variant, selection, l);
    auto it = pool.find({l, kind});
    if (it == pool.end()) {
      throw Error(ErrorCode::missing_component,
                  std::string("missing ") + probes::to_string(kind) + " probe at layer " + std::to_string(l));
    }
    out.emplace(l, it->second);
  }
  return out;
}

}  // namespace

masking::MaskSet build_masks(const LayerReadoutDataset& val, const diagnostics::LayerSelection& selection,
                             const fusion::ProbePool& pool, fusion::Variant variant, const RunConfig& cfg) {
  const auto by_layer = probes_for(selection, pool, variant);
  return masking::build_mask_set(val, selection.s_cand, by_layer, cfg.rho, cfg.mask_k, cfg.standalone_target);
}

fusion::PipelinePlan train_plan(const LayerReadoutDataset& train, const LayerReadoutDataset& val,
                                const diagnostics::LayerSelection& selection, const fusion::ProbePool& pool,
                                fusion::Variant variant, const RunConfig& cfg,
                                std::vector<probes::LossRecord>* fusion_trace) {
  masking::MaskSet masks;
  if (variant == fusion::Variant::all_neurons) {
    masks = masking::full_masks(selection.s_cand, train.dim);
    masks.rho = cfg.rho;
  } else {
    masks = build_masks(val, selection, pool, variant, cfg);
  }
  auto head = fusion::FusionHead::warm_start(selection.s_cand, train.final_layer, train.dim);
  auto plan = fusion::assemble_plan(variant, selection, pool, std::move(masks), std::move(head));
  auto trained = fusion::train_fusion(train, plan, cfg.fusion);
  plan.head = std::move(trained.head);
  if (fusion_trace) *fusion_trace = std::move(trained.trace);
  return plan;
}

eval::PairedRetrieval evaluate_plan(const LayerReadoutDataset& data, const fusion::PipelinePlan& plan,
                                    const RunConfig& cfg) {
  const Matrix q = fusion::embed_all(data, Modality::text, plan);
  const Matrix d = fusion::embed_all(data, Modality::vision, plan);
  return eval::evaluate_paired(q, d, cfg.eval_ks, eval::Similarity::inner_product, cfg.gain);
}

Comparison compare_to_baseline(const LayerReadoutDataset& data, const fusion::PipelinePlan& plan,
                               const RunConfig& cfg) {
  Comparison c;
  c.baseline = evaluate_plan(data, fusion::identity_plan(data.final_layer, data.dim), cfg);
  c.miner = evaluate_plan(data, plan, cfg);
  for (std::size_t i = 0; i < cfg.eval_ks.size(); ++i) {
    MetricRow row;
    row.metric = "ndcg@" + std::to_string(cfg.eval_ks[i]);
    row.baseline = c.baseline.mean_ndcg[i];
    row.miner = c.miner.mean_ndcg[i];
    row.ttest = eval::paired_ttest(c.miner.ndcg[i], c.baseline.ndcg[i]);
    c.rows.push_back(std::move(row));
  }
  std::vector<double> hits_m(c.miner.top1_hit.begin(), c.miner.top1_hit.end());
  std::vector<double> hits_b(c.baseline.top1_hit.begin(), c.baseline.top1_hit.end());
  c.rows.push_back({"top1", c.baseline.top1, c.miner.top1, eval::paired_ttest(hits_m, hits_b)});
  return c;
}

std::string comparison_csv(const Comparison& cmp) {
  std::string out = "metric,baseline,miner,delta,t,p\n";
  for (const auto& r : cmp.rows) {
    out += r.metric + "," + fmt_real(r.baseline) + "," + fmt_real(r.miner) + "," + fmt_real(r.miner - r.baseline) + "," +
           r.ttest.t_string() + "," + fmt_real(r.ttest.p) + "\n";
  }
  return out;
}

PipelineResult run_pipeline(const Dump& dump, const RunConfig& cfg) {
  cfg.validate();
  const auto splits = make_splits(dump, cfg);
  PipelineResult r;
  r.report = diagnostics::compute_report(splits.val.data, cfg.center);
  r.selection = diagnostics::select_candidates(r.report, cfg.tau_cka, cfg.k_base);
  const auto jobs = probe_jobs(r.selection, cfg.variant);
  r.probes = train_probe_pool(splits.train.data, jobs, cfg.probe, &r.probe_trace);
  r.plan = train_plan(splits.train.data, splits.val.data, r.selection, r.probes, cfg.variant, cfg, &r.fusion_trace);
  r.comparison = compare_to_baseline(splits.test.data, r.plan, cfg);
  return r;
}

std::vector<SweepRow> run_sweep(const Dump& dump, const RunConfig& cfg) {
  cfg.validate();
  const auto splits = make_splits(dump, cfg);
  const auto report = diagnostics::compute_report(splits.val.data, cfg.center);
  // A job's trajectory depends only on the seed and its own parameters, so
  // one pool trained on every layer serves every grid point.
  const auto jobs = all_probe_jobs(splits.train.data);
  const auto pool = train_probe_pool(splits.train.data, jobs, cfg.probe);

  std::map<std::pair<double, double>, SweepRow> cache;
  auto point = [&](double tau, double rho) {
    auto it = cache.find({tau, rho});
    if (it != cache.end()) return it->second;
    SweepRow row;
    row.tau_cka = tau;
    row.rho = rho;
    try {
      const auto sel = diagnostics::select_candidates(report, tau, cfg.k_base);
      RunConfig local = cfg;
      local.tau_cka = tau;
      local.rho = rho;
      const auto plan = train_plan(splits.train.data, splits.val.data, sel, pool, cfg.variant, local);
      const auto res = evaluate_plan(splits.test.data, plan, local);
      row.s_cand = sel.s_cand;
      row.n_candidates = sel.s_cand.size();
      row.top1 = res.top1;
      const auto k5 = std::find(local.eval_ks.begin(), local.eval_ks.end(), std::size_t{5});
      if (k5 != local.eval_ks.end()) {
        row.ndcg5 = res.mean_ndcg[static_cast<std::size_t>(k5 - local.eval_ks.begin())];
      } else {
        const std::size_t ks[] = {5};
        row.ndcg5 = eval::evaluate_paired(fusion::embed_all(splits.test.data, Modality::text, plan),
                                          fusion::embed_all(splits.test.data, Modality::vision, plan), ks,
                                          eval::Similarity::inner_product, local.gain)
                        .mean_ndcg[0];
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::no_candidates) throw;
    }
    cache.emplace(std::make_pair(tau, rho), row);
    return row;
  };

  const SweepRow def = point(cfg.tau_cka, cfg.rho);
  std::vector<SweepRow> rows;
  for (double t : cfg.sweep_tau) rows.push_back(point(t, cfg.rho));
  for (double r : cfg.sweep_rho) rows.push_back(point(cfg.tau_cka, r));
  for (auto& row : rows) row.top1_rel_pct = def.top1 > 0.0 ? 100.0 * row.top1 / def.top1 : 0.0;
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "tau_cka,rho,s_cand,n_candidates,top1,ndcg@5,top1_rel_pct\n";
  for (const auto& r : rows) {
    const std::string range =
        r.s_cand.empty() ? "" : std::to_string(r.s_cand.front()) + "-" + std::to_string(r.s_cand.back());
    out += fmt_real(r.tau_cka) + "," + fmt_real(r.rho) + "," + range + "," + std::to_string(r.n_candidates) + "," + fmt_real(r.top1) +
           "," + fmt_real(r.ndcg5) + "," + fmt_real(r.top1_rel_pct) + "\n";
  }
  return out;
}

std::string selection_json(const diagnostics::LayerSelection& s) {
  json j{{"tau_cka", s.tau_cka}, {"k_base", s.k_base}, {"s_cand", s.s_cand}, {"s_base", s.s_base}, {"s_norm", s.s_norm}};
  return j.dump(2) + "\n";
}

diagnostics::LayerSelection parse_selection(std::string_view json_text) {
  try {
    const auto j = json::parse(json_text);
    auto sel = diagnostics::partition(j.at("s_cand").get<std::vector<std::uint32_t>>(), j.at("tau_cka").get<double>(),
                                      j.at("k_base").get<std::size_t>());
    if (sel.s_base != j.at("s_base").get<std::vector<std::uint32_t>>() ||
        sel.s_norm != j.at("s_norm").get<std::vector<std::uint32_t>>()) {
      throw Error(ErrorCode::manifest_mismatch, "selection partition is inconsistent");
    }
    return sel;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("selection: ") + e.what());
  }
}

namespace {

std::string probe_file_name(std::uint32_t layer, ProbeKind kind) {
  return std::to_string(layer) + "_" + probes::to_string(kind) + ".probe";
}

}  // namespace

void save_probe_pool(const fs::path& dir, const fusion::ProbePool& pool) {
  json index = json::array();
  for (const auto& [key, params] : pool) {
    const auto name = probe_file_name(key.first, key.second);
    io::write_file_bytes(dir / name, probes::encode_probe(params));
    index.push_back({{"layer", key.first}, {"kind", probes::to_string(key.second)}, {"file", name}});
  }
  io::write_file_text(dir / "index.json", index.dump(2) + "\n");
}

fusion::ProbePool load_probe_pool(const fs::path& dir) {
  fusion::ProbePool pool;
  json index;
  try {
    index = json::parse(io::read_file_text(dir / "index.json"));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("probe index: ") + e.what());
  }
  for (const auto& entry : index) {
    const auto params = probes::decode_probe(io::read_file_bytes(dir / entry.at("file").get<std::string>()));
    if (params.layer != entry.at("layer").get<std::uint32_t>() ||
        probes::to_string(params.kind) != entry.at("kind").get<std::string>()) {
      throw Error(ErrorCode::manifest_mismatch, "probe file disagrees with index.json");
    }
    pool.emplace(std::make_pair(params.layer, params.kind), params);
  }
  return pool;
}

void save_plan(const fs::path& dir, const fusion::PipelinePlan& plan) {
  plan.validate();
  json j;
  j["variant"] = fusion::to_string(plan.variant);
  j["selection"] = json::parse(selection_json(plan.selection));
  j["probes"] = json::array();
  for (const auto& [layer, params] : plan.probes) {
    const auto name = "probes/" + probe_file_name(layer, params.kind);
    io::write_file_bytes(dir / name, probes::encode_probe(params));
    j["probes"].push_back({{"layer", layer}, {"kind", probes::to_string(params.kind)}, {"file", name}});
  }
  io::write_file_text(dir / "masks.json", masking::encode_mask_set(plan.masks));
  io::write_file_bytes(dir / "head.fuse", fusion::encode_head(plan.head));
  j["masks"] = "masks.json";
  j["head"] = "head.fuse";
  io::write_file_text(dir / "plan.json", j.dump(2) + "\n");
}

fusion::PipelinePlan load_plan(const fs::path& dir) {
  json j;
  try {
    j = json::parse(io::read_file_text(dir / "plan.json"));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("plan.json: ") + e.what());
  }
  fusion::PipelinePlan plan;
  try {
    plan.variant = fusion::parse_variant(j.at("variant").get<std::string>());
    plan.selection = parse_selection(j.at("selection").dump());
    for (const auto& p : j.at("probes")) {
      auto params = probes::decode_probe(io::read_file_bytes(dir / p.at("file").get<std::string>()));
      plan.probes.emplace(params.layer, std::move(params));
    }
    plan.masks = masking::decode_mask_set(io::read_file_text(dir / j.at("masks").get<std::string>()));
    plan.head = fusion::decode_head(io::read_file_bytes(dir / j.at("head").get<std::string>()));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("plan.json: ") + e.what());
  }
  plan.validate();
  return plan;
}

}  // namespace miner::pipeline
