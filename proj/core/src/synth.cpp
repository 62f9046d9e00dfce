// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#include "miner/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <Eigen/QR>
#include <json.hpp>

#include "miner/error.hpp"

namespace miner::synth {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive(std::uint64_t a, std::uint64_t b) { return splitmix64(splitmix64(a) ^ b); }

// Box-Muller keeps the stream identical across standard libraries, unlike
// std::normal_distribution.
class Gaussian {
 public:
  explicit Gaussian(std::uint64_t seed) : rng_(seed) {}
  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * M_PI * u2;
    spare_ = r * std::sin(th);
    has_spare_ = true;
    return r * std::cos(th);
  }

 private:
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Gaussian& g, double scale = 1.0) {
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * g();
  return m;
}

constexpr std::uint64_t kTextStream = 1;
constexpr std::uint64_t kVisionStream = 2;

}  // namespace

const char* to_string(Regime r) noexcept {
  switch (r) {
    case Regime::final: return "final";
    case Regime::aligned: return "aligned";
    case Regime::noisy: return "noisy";
    case Regime::rotated: return "rotated";
    case Regime::sparse_signal: return "sparse_signal";
  }
  return "aligned";
}

Regime parse_regime(std::string_view name) {
  if (name == "final") return Regime::final;
  if (name == "aligned") return Regime::aligned;
  if (name == "noisy") return Regime::noisy;
  if (name == "rotated") return Regime::rotated;
  if (name == "sparse_signal") return Regime::sparse_signal;
  throw Error(ErrorCode::parse_error, "unknown regime '" + std::string(name) + "'");
}

void SynthConfig::validate() const {
  if (n_pairs < 2) throw Error(ErrorCode::invalid_argument, "synth needs n_pairs >= 2");
  if (dim < 1) throw Error(ErrorCode::invalid_argument, "synth needs dim >= 1");
  if (!(anchor_sigma >= 0.0) || !std::isfinite(anchor_sigma)) {
    throw Error(ErrorCode::invalid_argument, "anchor_sigma must be finite and >= 0");
  }
  if (layers.empty()) throw Error(ErrorCode::invalid_argument, "synth needs >= 1 layer");
  std::set<std::uint32_t> seen;
  std::size_t finals = 0;
  for (const auto& l : layers) {
    if (!seen.insert(l.index).second) {
      throw Error(ErrorCode::invalid_argument, "duplicate layer index " + std::to_string(l.index));
    }
    if (l.regime == Regime::final) ++finals;
    if (!(l.sigma >= 0.0) || !std::isfinite(l.sigma)) {
      throw Error(ErrorCode::invalid_argument, "layer sigma must be finite and >= 0");
    }
    if (l.regime == Regime::sparse_signal) {
      const std::size_t s = l.support == 0 ? std::max<std::size_t>(1, dim / 8) : l.support;
      if (s > dim) throw Error(ErrorCode::invalid_argument, "support exceeds dim");
      if (!(l.snr > 0.0) || !std::isfinite(l.snr)) throw Error(ErrorCode::invalid_argument, "snr must be > 0");
    }
  }
  if (finals != 1) throw Error(ErrorCode::invalid_argument, "exactly one layer must have regime 'final'");
}

std::uint32_t SynthConfig::final_layer() const {
  for (const auto& l : layers) {
    if (l.regime == Regime::final) return l.index;
  }
  throw Error(ErrorCode::invalid_argument, "no final layer");
}

const LayerSpec& SynthConfig::spec(std::uint32_t layer) const {
  for (const auto& l : layers) {
    if (l.index == layer) return l;
  }
  throw Error(ErrorCode::invalid_argument, "no such layer " + std::to_string(layer));
}

SynthConfig parse_config(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("synth config: ") + e.what());
  }
  SynthConfig cfg;
  try {
    cfg.n_pairs = j.value("n_pairs", cfg.n_pairs);
    cfg.dim = j.value("dim", cfg.dim);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.anchor_sigma = j.value("anchor_sigma", cfg.anchor_sigma);
    cfg.unit_rows = j.value("unit_rows", cfg.unit_rows);
    for (const auto& lj : j.at("layers")) {
      LayerSpec s;
      s.index = lj.at("index").get<std::uint32_t>();
      s.regime = parse_regime(lj.at("regime").get<std::string>());
      s.seed = lj.value("seed", static_cast<std::uint64_t>(s.index));
      s.sigma = lj.value("sigma", s.sigma);
      s.support = lj.value("support", s.support);
      s.snr = lj.value("snr", s.snr);
      cfg.layers.push_back(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("synth config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::string config_json(const SynthConfig& cfg) {
  nlohmann::json j;
  j["n_pairs"] = cfg.n_pairs;
  j["dim"] = cfg.dim;
  j["seed"] = cfg.seed;
  j["anchor_sigma"] = cfg.anchor_sigma;
  j["unit_rows"] = cfg.unit_rows;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : cfg.layers) {
    j["layers"].push_back({{"index", l.index},
                           {"regime", to_string(l.regime)},
                           {"seed", l.seed},
                           {"sigma", l.sigma},
                           {"support", l.support},
                           {"snr", l.snr}});
  }
  return j.dump(2) + "\n";
}

Matrix random_orthogonal(std::size_t dim, std::uint64_t seed) {
  Gaussian g(derive(seed, 0x0A7E));
  const Matrix a = gaussian_matrix(dim, dim, g);
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index k = 0; k < q.cols(); ++k) {
    if (r(k, k) < 0.0) q.col(k) *= -1.0;
  }
  return q;
}

Matrix planted_rotation(const SynthConfig& cfg, std::uint32_t layer) {
  const auto& s = cfg.spec(layer);
  if (s.regime != Regime::rotated) throw Error(ErrorCode::invalid_argument, "layer is not rotated");
  return random_orthogonal(cfg.dim, derive(cfg.seed, s.seed));
}

std::vector<std::size_t> planted_support(const SynthConfig& cfg, std::uint32_t layer) {
  const auto& s = cfg.spec(layer);
  if (s.regime != Regime::sparse_signal) throw Error(ErrorCode::invalid_argument, "layer is not sparse_signal");
  const std::size_t count = s.support == 0 ? std::max<std::size_t>(1, cfg.dim / 8) : s.support;
  std::vector<std::size_t> coords(cfg.dim);
  std::iota(coords.begin(), coords.end(), 0);
  std::mt19937_64 rng(derive(derive(cfg.seed, s.seed), 0x5EED));
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (cfg.dim - i));
    std::swap(coords[i], coords[j]);
  }
  coords.resize(count);
  std::sort(coords.begin(), coords.end());
  return coords;
}

Dump generate(const SynthConfig& cfg) {
  cfg.validate();
  const auto n = cfg.n_pairs;
  const auto d = cfg.dim;

  Gaussian anchor_gen(derive(cfg.seed, 0xA4C4));
  Matrix anchors = gaussian_matrix(n, d, anchor_gen);
  for (Eigen::Index i = 0; i < anchors.rows(); ++i) {
    double norm = anchors.row(i).norm();
    if (norm == 0.0) {
      anchors(i, 0) = 1.0;
      norm = 1.0;
    }
    anchors.row(i) /= norm;
  }
  Gaussian text_noise(derive(cfg.seed, 0xF1A1 + kTextStream));
  Gaussian vision_noise(derive(cfg.seed, 0xF1A1 + kVisionStream));
  const Matrix final_text = anchors + gaussian_matrix(n, d, text_noise, cfg.anchor_sigma);
  const Matrix final_vision = anchors + gaussian_matrix(n, d, vision_noise, cfg.anchor_sigma);

  std::vector<LayerSpec> specs = cfg.layers;
  std::sort(specs.begin(), specs.end(), [](const auto& a, const auto& b) { return a.index < b.index; });

  Dump dump;
  auto& data = dump.data;
  data.dim = d;
  data.n_pairs = n;
  data.final_layer = cfg.final_layer();
  data.split = SplitTag::unsplit;
  data.hard_negatives.assign(n, {});
  for (const auto& s : specs) data.layers.push_back(s.index);
  const std::size_t block = n * d;
  data.text.assign(specs.size() * block, 0.0f);
  data.vision.assign(specs.size() * block, 0.0f);

  for (std::size_t lp = 0; lp < specs.size(); ++lp) {
    const auto& s = specs[lp];
    const std::uint64_t layer_seed = derive(cfg.seed, s.seed);
    Matrix t, v;
    switch (s.regime) {
      case Regime::final:
      case Regime::aligned:
        t = final_text;
        v = final_vision;
        break;
      case Regime::noisy: {
        Gaussian gt(derive(layer_seed, kTextStream));
        Gaussian gv(derive(layer_seed, kVisionStream));
        t = final_text + gaussian_matrix(n, d, gt, s.sigma);
        v = final_vision + gaussian_matrix(n, d, gv, s.sigma);
        break;
      }
      case Regime::rotated: {
        const Matrix r = random_orthogonal(d, layer_seed);
        t = final_text * r.transpose();
        v = final_vision * r.transpose();
        break;
      }
      case Regime::sparse_signal: {
        const auto support = planted_support(cfg, s.index);
        const double rest_sd = 1.0 / (s.snr * std::sqrt(static_cast<double>(d)));
        Gaussian gt(derive(layer_seed, kTextStream));
        Gaussian gv(derive(layer_seed, kVisionStream));
        t = gaussian_matrix(n, d, gt, rest_sd);
        v = gaussian_matrix(n, d, gv, rest_sd);
        Gaussian st(derive(layer_seed, kTextStream + 16));
        Gaussian sv(derive(layer_seed, kVisionStream + 16));
        for (std::size_t i = 0; i < n; ++i) {
          for (auto c : support) {
            const auto ii = static_cast<Eigen::Index>(i);
            const auto cc = static_cast<Eigen::Index>(c);
            t(ii, cc) = anchors(ii, cc) + s.sigma * st();
            v(ii, cc) = anchors(ii, cc) + s.sigma * sv();
          }
        }
        break;
      }
    }
    if (cfg.unit_rows) {
      for (Matrix* m : {&t, &v}) {
        for (Eigen::Index i = 0; i < m->rows(); ++i) {
          const double norm = m->row(i).norm();
          if (norm > 0.0) m->row(i) /= norm;
        }
      }
    }
    for (std::size_t k = 0; k < block; ++k) {
      data.text[lp * block + k] = static_cast<float>(t.data()[k]);
      data.vision[lp * block + k] = static_cast<float>(v.data()[k]);
    }
  }

  dump.manifest.pair_ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) dump.manifest.pair_ids.push_back("synth-" + std::to_string(i));
  dump.manifest.provenance = "synth seed=" + std::to_string(cfg.seed);
  data.validate();
  return dump;
}

SynthConfig rotation_task(std::uint64_t seed, std::size_t n_pairs, std::size_t dim) {
  SynthConfig cfg;
  cfg.n_pairs = n_pairs;
  cfg.dim = dim;
  cfg.seed = seed;
  cfg.anchor_sigma = 0.01;
  cfg.layers = {{4, Regime::aligned, 4}, {8, Regime::rotated, 8}, {12, Regime::final, 12}};
  return cfg;
}

SynthConfig planted_signal_task(std::uint64_t seed, std::size_t n_pairs, std::size_t dim) {
  SynthConfig cfg;
  cfg.n_pairs = n_pairs;
  cfg.dim = dim;
  cfg.seed = seed;
  cfg.anchor_sigma = 0.15;
  cfg.unit_rows = true;
  // The rotated layer sits among the deepest candidates, so it gets a base
  // probe, scores lowest standalone and anchors the utility min-max.
  LayerSpec noisy_low{4, Regime::noisy, 4, 1.0};
  LayerSpec noisy_mid{8, Regime::noisy, 8, 0.05};
  LayerSpec aligned{12, Regime::aligned, 12};
  LayerSpec sparse{16, Regime::sparse_signal, 16, 0.07, std::max<std::size_t>(1, 3 * dim / 8), 8.0};
  LayerSpec rotated{20, Regime::rotated, 20};
  LayerSpec fin{24, Regime::final, 24};
  cfg.layers = {noisy_low, noisy_mid, aligned, sparse, rotated, fin};
  return cfg;
}

}  // namespace miner::synth
