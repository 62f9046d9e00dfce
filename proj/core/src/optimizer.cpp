// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#include "miner/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "miner/error.hpp"

namespace miner {

TrainConfig TrainConfig::probe_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::fusion_defaults() {
  TrainConfig c;
  c.learning_rate = 1e-5;
  c.batch_size = 512;
  c.weight_decay = 1e-4;
  c.l1_lambda = 0.0;
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::invalid_argument, "learning_rate must be > 0");
  if (batch_size < 2) throw Error(ErrorCode::invalid_argument, "batch_size must be >= 2");
  if (epochs == 0) throw Error(ErrorCode::invalid_argument, "epochs must be positive");
  if (!(warmup >= 0.0 && warmup <= 1.0)) throw Error(ErrorCode::invalid_argument, "warmup");
  if (!(weight_decay >= 0.0)) throw Error(ErrorCode::invalid_argument, "weight_decay must be >= 0");
  if (!(l1_lambda >= 0.0)) throw Error(ErrorCode::invalid_argument, "l1_lambda must be >= 0");
  if (!(temperature > 0.0)) throw Error(ErrorCode::invalid_argument, "temperature must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw Error(ErrorCode::invalid_argument, "adam_eps must be > 0");
}

double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
  const auto warm = static_cast<std::size_t>(std::llround(cfg.warmup * static_cast<double>(total_steps)));
  if (warm == 0 || step >= warm) return cfg.learning_rate;
  return cfg.learning_rate * static_cast<double>(step) / static_cast<double>(warm);
}

void adamw_update(Eigen::Ref<Eigen::ArrayXd> param, const Eigen::Ref<const Eigen::ArrayXd>& grad,
                  MomentBuffers& state, std::uint64_t step, double lr, double weight_decay,
                  const TrainConfig& cfg) {
  if (param.size() != grad.size() || state.m.size() != param.size()) {
    throw Error(ErrorCode::dimension_mismatch, "adamw_update shapes");
  }
  if (weight_decay > 0.0) param *= (1.0 - lr * weight_decay);
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.square();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  param -= lr * (state.m / c1) / ((state.v / c2).sqrt() + cfg.adam_eps);
}

}  // namespace miner
