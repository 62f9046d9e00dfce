// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#include "miner/repr_store.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_set>

#include <json.hpp>

#include "miner/binary_io.hpp"
#include "miner/error.hpp"

namespace miner {

using nlohmann::json;

const char* to_string(SplitTag tag) noexcept {
  switch (tag) {
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
    case SplitTag::test: return "test";
    case SplitTag::unsplit: return "unsplit";
  }
  return "unsplit";
}

SplitTag parse_split_tag(std::string_view name) {
  if (name == "train") return SplitTag::train;
  if (name == "val") return SplitTag::val;
  if (name == "test") return SplitTag::test;
  if (name == "unsplit") return SplitTag::unsplit;
  throw Error(ErrorCode::parse_error, "unknown split tag '" + std::string(name) + "'");
}

std::size_t LayerReadoutDataset::layer_position(std::uint32_t layer) const {
  auto it = std::find(layers.begin(), layers.end(), layer);
  if (it == layers.end()) {
    throw Error(ErrorCode::invalid_argument, "layer " + std::to_string(layer) + " not in dataset");
  }
  return static_cast<std::size_t>(it - layers.begin());
}

bool LayerReadoutDataset::has_layer(std::uint32_t layer) const noexcept {
  return std::find(layers.begin(), layers.end(), layer) != layers.end();
}

std::span<const float> LayerReadoutDataset::readout(Modality m, std::size_t layer_pos,
                                                    std::size_t sample) const {
  const auto& block = m == Modality::text ? text : vision;
  const std::size_t offset = (layer_pos * n_pairs + sample) * dim;
  return {block.data() + offset, dim};
}

std::span<float> LayerReadoutDataset::readout(Modality m, std::size_t layer_pos, std::size_t sample) {
  auto& block = m == Modality::text ? text : vision;
  const std::size_t offset = (layer_pos * n_pairs + sample) * dim;
  return {block.data() + offset, dim};
}

Matrix LayerReadoutDataset::layer_matrix(Modality m, std::uint32_t layer) const {
  const std::size_t pos = layer_position(layer);
  Matrix out(n_pairs, dim);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    auto row = readout(m, pos, i);
    for (std::size_t j = 0; j < dim; ++j) out(i, j) = row[j];
  }
  return out;
}

void LayerReadoutDataset::validate() const {
  if (dim == 0) throw Error(ErrorCode::invalid_argument, "dim must be positive");
  if (n_pairs == 0) throw Error(ErrorCode::invalid_argument, "n_pairs must be positive");
  if (layers.empty()) throw Error(ErrorCode::invalid_argument, "layer list is empty");
  {
    std::unordered_set<std::uint32_t> seen;
    for (auto l : layers) {
      if (!seen.insert(l).second) {
        throw Error(ErrorCode::invalid_argument, "duplicate layer " + std::to_string(l));
      }
    }
  }
  if (!has_layer(final_layer)) {
    throw Error(ErrorCode::invalid_argument, "final layer " + std::to_string(final_layer) +
                                                 " missing from layer list");
  }
  const std::size_t expected = layers.size() * n_pairs * dim;
  if (text.size() != expected || vision.size() != expected) {
    throw Error(ErrorCode::dimension_mismatch, "readout blocks do not match [layers][N][D]");
  }
  auto finite = [](const std::vector<float>& v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
  };
  if (!finite(text) || !finite(vision)) {
    throw Error(ErrorCode::non_finite, "readouts contain NaN or Inf");
  }
  if (!hard_negatives.empty()) {
    if (hard_negatives.size() != n_pairs) {
      throw Error(ErrorCode::dimension_mismatch, "hard_negatives must have one list per pair");
    }
    for (std::size_t i = 0; i < hard_negatives.size(); ++i) {
      for (auto j : hard_negatives[i]) {
        if (j >= n_pairs || j == i) {
          throw Error(ErrorCode::invalid_argument,
                      "hard negative " + std::to_string(j) + " invalid for pair " + std::to_string(i));
        }
      }
    }
  }
}

std::size_t payload_size(std::uint32_t dim, std::size_t n_layers, std::uint32_t n_pairs) noexcept {
  return 4 + 4 * 4 + n_layers * 4 + 4 + 2 * n_layers * std::size_t{n_pairs} * dim * 4;
}

namespace {

json manifest_json(const LayerReadoutDataset& d, const DumpManifest& m) {
  json doc;
  doc["version"] = m.format_version;
  doc["pair_ids"] = m.pair_ids;
  doc["provenance"] = m.provenance;
  doc["split"] = to_string(d.split);
  doc["final_layer"] = d.final_layer;
  doc["hard_negatives"] = d.hard_negatives.empty() ? json::array() : json(d.hard_negatives);
  return doc;
}

void check_manifest(const LayerReadoutDataset& d, const DumpManifest& m) {
  if (m.pair_ids.size() != d.n_pairs) {
    throw Error(ErrorCode::manifest_mismatch, "manifest has " + std::to_string(m.pair_ids.size()) +
                                                  " pair ids, payload has " +
                                                  std::to_string(d.n_pairs) + " pairs");
  }
  std::unordered_set<std::string> seen;
  for (const auto& id : m.pair_ids) {
    if (!seen.insert(id).second) throw Error(ErrorCode::manifest_mismatch, "duplicate pair id " + id);
  }
}

}  // namespace

DumpBytes write_dump(const LayerReadoutDataset& dataset, const DumpManifest& manifest) {
  dataset.validate();
  check_manifest(dataset, manifest);

  io::ByteWriter w;
  w.magic("LRD1");
  w.u32(kDumpVersion);
  w.u32(dataset.dim);
  w.u32(static_cast<std::uint32_t>(dataset.layers.size()));
  w.u32(dataset.n_pairs);
  for (auto l : dataset.layers) w.u32(l);
  w.u32(dataset.final_layer);
  for (float v : dataset.text) w.f32(v);
  for (float v : dataset.vision) w.f32(v);

  return {std::move(w).take(), manifest_json(dataset, manifest).dump(2) + "\n"};
}

Dump read_dump(std::span<const std::uint8_t> payload, std::string_view manifest_text) {
  io::ByteReader r(payload);
  const auto magic = r.magic();
  if (std::string_view(magic.data(), 4) != "LRD1") {
    throw Error(ErrorCode::bad_magic, "payload does not start with LRD1");
  }
  const auto version = r.u32();
  if (version != kDumpVersion) {
    throw Error(ErrorCode::version_mismatch, "payload version " + std::to_string(version));
  }
  Dump out;
  auto& d = out.data;
  d.dim = r.u32();
  const auto n_layers = r.u32();
  d.n_pairs = r.u32();
  r.require(std::size_t{n_layers} * 4 + 4);
  d.layers.resize(n_layers);
  for (auto& l : d.layers) l = r.u32();
  d.final_layer = r.u32();

  const std::size_t count = std::size_t{n_layers} * d.n_pairs * d.dim;
  r.require(2 * count * 4);
  d.text.resize(count);
  d.vision.resize(count);
  for (auto& v : d.text) v = r.f32();
  for (auto& v : d.vision) v = r.f32();
  if (r.remaining() != 0) {
    throw Error(ErrorCode::trailing_bytes, std::to_string(r.remaining()) + " bytes after body");
  }

  json doc;
  try {
    doc = json::parse(manifest_text);
    out.manifest.format_version = doc.at("version").get<std::uint32_t>();
    out.manifest.pair_ids = doc.at("pair_ids").get<std::vector<std::string>>();
    out.manifest.provenance = doc.value("provenance", std::string{});
    d.split = parse_split_tag(doc.value("split", std::string{"unsplit"}));
    if (doc.contains("hard_negatives")) {
      d.hard_negatives = doc["hard_negatives"].get<std::vector<std::vector<std::uint32_t>>>();
    }
    if (doc.contains("final_layer") && doc["final_layer"].get<std::uint32_t>() != d.final_layer) {
      throw Error(ErrorCode::manifest_mismatch, "final_layer differs between manifest and payload");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("manifest: ") + e.what());
  }
  if (out.manifest.format_version != kDumpVersion) {
    throw Error(ErrorCode::version_mismatch, "manifest version " +
                                                 std::to_string(out.manifest.format_version));
  }
  check_manifest(d, out.manifest);
  d.validate();
  return out;
}

std::filesystem::path manifest_path_for(const std::filesystem::path& lrd_path) {
  auto p = lrd_path;
  p.replace_extension(".manifest.json");
  return p;
}

void save_dump(const std::filesystem::path& lrd_path, const Dump& dump) {
  auto bytes = write_dump(dump.data, dump.manifest);
  io::write_file_bytes(lrd_path, bytes.payload);
  io::write_file_text(manifest_path_for(lrd_path), bytes.manifest);
}

Dump load_dump(const std::filesystem::path& lrd_path, std::optional<std::filesystem::path> manifest_path) {
  const auto payload = io::read_file_bytes(lrd_path);
  const auto manifest = io::read_file_text(manifest_path.value_or(manifest_path_for(lrd_path)));
  return read_dump(payload, manifest);
}

Dump subset(const Dump& dump, std::span<const std::size_t> pair_indices, SplitTag tag) {
  const auto& src = dump.data;
  Dump out;
  auto& d = out.data;
  d.dim = src.dim;
  d.layers = src.layers;
  d.final_layer = src.final_layer;
  d.n_pairs = static_cast<std::uint32_t>(pair_indices.size());
  d.split = tag;
  d.text.resize(src.layers.size() * d.n_pairs * d.dim);
  d.vision.resize(d.text.size());

  std::vector<std::int64_t> remap(src.n_pairs, -1);
  for (std::size_t k = 0; k < pair_indices.size(); ++k) {
    const auto i = pair_indices[k];
    if (i >= src.n_pairs) throw Error(ErrorCode::invalid_argument, "pair index out of range");
    if (remap[i] >= 0) throw Error(ErrorCode::invalid_argument, "pair index repeated in subset");
    remap[i] = static_cast<std::int64_t>(k);
  }
  for (std::size_t lp = 0; lp < src.layers.size(); ++lp) {
    for (std::size_t k = 0; k < pair_indices.size(); ++k) {
      for (auto m : {Modality::text, Modality::vision}) {
        auto from = src.readout(m, lp, pair_indices[k]);
        auto to = d.readout(m, lp, k);
        std::copy(from.begin(), from.end(), to.begin());
      }
    }
  }
  if (!src.hard_negatives.empty()) {
    d.hard_negatives.resize(d.n_pairs);
    for (std::size_t k = 0; k < pair_indices.size(); ++k) {
      for (auto j : src.hard_negatives[pair_indices[k]]) {
        if (remap[j] >= 0) d.hard_negatives[k].push_back(static_cast<std::uint32_t>(remap[j]));
      }
    }
  }
  out.manifest.format_version = dump.manifest.format_version;
  out.manifest.provenance = dump.manifest.provenance;
  out.manifest.pair_ids.reserve(pair_indices.size());
  for (auto i : pair_indices) out.manifest.pair_ids.push_back(dump.manifest.pair_ids.at(i));
  return out;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Explicit Fisher-Yates so the permutation does not depend on the
  // standard library's distribution implementation.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

SplitResult split(const Dump& dump, double train_fraction, std::uint64_t seed) {
  const std::size_t n = dump.data.n_pairs;
  if (n < 2) throw Error(ErrorCode::empty_split, "split needs at least 2 pairs");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "train_fraction must lie in (0, 1)");
  }
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train >= n) {
    throw Error(ErrorCode::empty_split, "fraction " + std::to_string(train_fraction) +
                                            " leaves one side empty for N=" + std::to_string(n));
  }
  auto order = seeded_permutation(n, seed);
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> val(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {subset(dump, train, SplitTag::train), subset(dump, val, SplitTag::val)};
}

}  // namespace miner
