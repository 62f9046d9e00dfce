// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#include "miner/error.hpp"

namespace miner {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::version_mismatch: return "version_mismatch";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::trailing_bytes: return "trailing_bytes";
    case ErrorCode::manifest_mismatch: return "manifest_mismatch";
    case ErrorCode::empty_split: return "empty_split";
    case ErrorCode::degenerate_representation: return "degenerate_representation";
    case ErrorCode::zero_norm: return "zero_norm";
    case ErrorCode::no_candidates: return "no_candidates";
    case ErrorCode::degenerate_projection_row: return "degenerate_projection_row";
    case ErrorCode::empty_input: return "empty_input";
    case ErrorCode::variant_mismatch: return "variant_mismatch";
    case ErrorCode::missing_component: return "missing_component";
    case ErrorCode::io_error: return "io_error";
    case ErrorCode::parse_error: return "parse_error";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

}  // namespace miner
