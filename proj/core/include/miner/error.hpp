// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace miner {

enum class ErrorCode {
  invalid_argument,
  dimension_mismatch,
  non_finite,
  bad_magic,
  version_mismatch,
  truncated,
  trailing_bytes,
  manifest_mismatch,
  empty_split,
  degenerate_representation,
  zero_norm,
  no_candidates,
  degenerate_projection_row,
  empty_input,
  variant_mismatch,
  missing_component,
  io_error,
  parse_error,
};

const char* to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so that
/// callers (the CLI in particular) can map them onto exit statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace miner
