// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace miner::io {

/// Little-endian appender used by every binary artifact (.lrd, .probe, .fuse).
class ByteWriter {
 public:
  void magic(std::string_view four_chars);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void f32(float v);

  std::vector<std::uint8_t> take() && { return std::move(bytes_); }
  std::size_t size() const noexcept { return bytes_.size(); }

 private:
  std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked little-endian cursor. Reading past the end throws
/// Error(truncated).
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::array<char, 4> magic();
  std::uint8_t u8();
  std::uint32_t u32();
  float f32();
  // Ensures `count` more bytes exist without consuming them.
  void require(std::size_t count) const;

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
std::string read_file_text(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_text(const std::filesystem::path& path, std::string_view text);

}  // namespace miner::io
