// Copyright 2026 The MINER Authors
// SPDX-License-Identifier: Apache-2.0

#include "miner/binary_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <sstream>

#include "miner/error.hpp"

namespace miner::io {

void ByteWriter::magic(std::string_view four_chars) {
  if (four_chars.size() != 4) throw Error(ErrorCode::invalid_argument, "magic must be 4 bytes");
  for (char c : four_chars) bytes_.push_back(static_cast<std::uint8_t>(c));
}

void ByteWriter::u8(std::uint8_t v) { bytes_.push_back(v); }

void ByteWriter::u32(std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) bytes_.push_back(static_cast<std::uint8_t>(v >> shift));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteReader::require(std::size_t count) const {
  if (remaining() < count) {
    throw Error(ErrorCode::truncated, "need " + std::to_string(count) + " bytes at offset " +
                                          std::to_string(pos_) + ", have " +
                                          std::to_string(remaining()));
  }
}

std::array<char, 4> ByteReader::magic() {
  require(4);
  std::array<char, 4> out{};
  for (auto& c : out) c = static_cast<char>(bytes_[pos_++]);
  return out;
}

std::uint8_t ByteReader::u8() {
  require(1);
  return bytes_[pos_++];
}

std::uint32_t ByteReader::u32() {
  require(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_file_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::io_error, "short write to " + path.string());
}

void write_file_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

}  // namespace miner::io
