#pragma once

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "eside/error.hpp"

namespace eside::io {

inline std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for large buffers.
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - offset, 1u << 30);
    crc = ::crc32(crc, bytes.data() + offset, static_cast<uInt>(chunk));
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

// Little-endian append-only encoder.
class ByteWriter {
 public:
  void bytes(std::span<const std::uint8_t> data) { buf_.insert(buf_.end(), data.begin(), data.end()); }

  void magic(std::string_view tag) {
    for (char c : tag) buf_.push_back(static_cast<std::uint8_t>(c));
  }

  void u8(std::uint8_t v) { buf_.push_back(v); }
  void i8(std::int8_t v) { buf_.push_back(static_cast<std::uint8_t>(v)); }

  void u16(std::uint16_t v) {
    buf_.push_back(static_cast<std::uint8_t>(v));
    buf_.push_back(static_cast<std::uint8_t>(v >> 8));
  }

  void u32(std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) buf_.push_back(static_cast<std::uint8_t>(v >> s));
  }

  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  void f32s(std::span<const float> vs) {
    for (float v : vs) f32(v);
  }

  // Appends the CRC32 of everything written so far.
  void crc_trailer() { u32(crc32(buf_)); }

  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

// Bounds-checked little-endian decoder. Running past the end throws
// FormatError(length_mismatch).
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  void expect_magic(std::string_view tag) {
    if (remaining() < tag.size() ||
        std::memcmp(data_.data() + pos_, tag.data(), tag.size()) != 0) {
      throw FormatError(FormatCode::bad_magic, "expected magic '" + std::string(tag) + "'");
    }
    pos_ += tag.size();
  }

  std::uint8_t u8() { return take(1)[0]; }
  std::int8_t i8() { return static_cast<std::int8_t>(take(1)[0]); }

  std::uint16_t u16() {
    auto b = take(2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }

  std::uint32_t u32() {
    auto b = take(4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::span<const std::uint8_t> take(std::size_t n) {
    if (remaining() < n) {
      throw FormatError(FormatCode::length_mismatch,
                        "unexpected end of data at offset " + std::to_string(pos_));
    }
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

// Splits off and verifies a trailing CRC32; returns the covered payload.
inline std::span<const std::uint8_t> verify_crc_trailer(std::span<const std::uint8_t> file) {
  if (file.size() < 4) throw FormatError(FormatCode::length_mismatch, "file shorter than CRC trailer");
  auto payload = file.first(file.size() - 4);
  ByteReader tail(file.last(4));
  const std::uint32_t stored = tail.u32();
  if (crc32(payload) != stored) throw FormatError(FormatCode::crc_mismatch, "CRC32 trailer does not match");
  return payload;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatCode::io, "cannot open " + path.string());
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatCode::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw FormatError(FormatCode::io, "write failed for " + path.string());
}

}  // namespace eside::io
