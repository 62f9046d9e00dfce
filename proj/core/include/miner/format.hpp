// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <optional>
#include <string>

namespace miner {

// Fixed-width %.10g keeps CSVs byte-stable across runs.
inline std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_real(*v) : std::string{}; }

}  // namespace miner
