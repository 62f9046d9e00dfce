// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>

#include <Eigen/Core>

namespace miner {

/// Training hyperparameters shared by the probe and fusion stages.
struct TrainConfig {
  double learning_rate = 2e-4;
  std::size_t batch_size = 1024;  // clamped to N at run time
  std::size_t epochs = 40;
  double warmup = 1.0 / 40.0;  // fraction of total steps with a linear ramp
  double weight_decay = 0.01;  // decoupled; never applied to p or to the bias
  double l1_lambda = 3e-4;     // on the probe importance vector only
  double temperature = 0.05;
  std::uint64_t seed = 42;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  static TrainConfig probe_defaults();
  static TrainConfig fusion_defaults();

  void validate() const;
};

/// Linear ramp over the warmup steps, constant afterwards. `step` is 1-based.
double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total_steps);

/// First/second moment accumulators for one flat parameter block.
struct MomentBuffers {
  Eigen::ArrayXd m;
  Eigen::ArrayXd v;

  void resize(Eigen::Index n) {
    m = Eigen::ArrayXd::Zero(n);
    v = Eigen::ArrayXd::Zero(n);
  }
};

/// One bias-corrected adaptive-moment update of `param` in place. Decoupled
/// decay multiplies the block by (1 - lr * weight_decay) before the moment
/// update. `step` is the 1-based step count used for bias correction.
void adamw_update(Eigen::Ref<Eigen::ArrayXd> param, const Eigen::Ref<const Eigen::ArrayXd>& grad,
                  MomentBuffers& state, std::uint64_t step, double lr, double weight_decay,
                  const TrainConfig& cfg);

}  // namespace miner
