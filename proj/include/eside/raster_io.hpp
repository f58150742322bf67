#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "eside/binary_io.hpp"
#include "eside/error.hpp"
#include "eside/raster.hpp"

namespace eside {

namespace detail {

// Upper bound on width * height * channels accepted from a file header.
inline constexpr std::uint64_t kMaxSamples = std::uint64_t{1} << 30;

inline void check_dimensions(std::uint64_t w, std::uint64_t h, std::uint64_t c) {
  if (w == 0 || h == 0) throw FormatError(FormatCode::corrupt_header, "zero image dimension");
  if (w > std::numeric_limits<int>::max() || h > std::numeric_limits<int>::max() || w * h > kMaxSamples ||
      w * h * c > kMaxSamples) {
    throw FormatError(FormatCode::dimension_overflow, "image dimensions too large");
  }
}

inline std::uint8_t quantize(double v) {
  // Round half up.
  const double scaled = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
  return static_cast<std::uint8_t>(std::min(scaled, 255.0));
}

inline bool has_extension(const std::filesystem::path& p, std::initializer_list<const char*> exts) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char ch) { return std::tolower(ch); });
  for (const char* x : exts)
    if (e == x) return true;
  return false;
}

// ---- PNM (binary P5 / P6) -------------------------------------------------

inline Raster decode_pnm(std::span<const std::uint8_t> data) {
  std::size_t pos = 0;
  auto fail = [](const std::string& msg) -> void { throw FormatError(FormatCode::corrupt_header, msg); };

  auto skip_space_and_comments = [&] {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(data[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&]() -> std::uint64_t {
    skip_space_and_comments();
    if (pos >= data.size() || !std::isdigit(data[pos])) fail("pnm: truncated or malformed header");
    std::uint64_t v = 0;
    while (pos < data.size() && std::isdigit(data[pos])) {
      v = v * 10 + (data[pos] - '0');
      if (v > (std::uint64_t{1} << 40)) throw FormatError(FormatCode::dimension_overflow, "pnm: header value too large");
      ++pos;
    }
    return v;
  };

  if (data.size() < 2 || data[0] != 'P') throw FormatError(FormatCode::unsupported_format, "not a PNM file");
  int channels = 0;
  if (data[1] == '5') channels = 1;
  else if (data[1] == '6') channels = 3;
  else throw FormatError(FormatCode::unsupported_format, "only binary P5/P6 PNM is supported");
  pos = 2;
  const auto w = read_uint();
  const auto h = read_uint();
  const auto maxval = read_uint();
  if (maxval == 0 || maxval > 255) throw FormatError(FormatCode::unsupported_format, "pnm: only 8-bit maxval supported");
  if (pos >= data.size() || !std::isspace(data[pos])) fail("pnm: missing separator after header");
  ++pos;
  check_dimensions(w, h, static_cast<std::uint64_t>(channels));
  const std::size_t n = static_cast<std::size_t>(w * h * channels);
  if (data.size() - pos < n) fail("pnm: truncated pixel data");

  Raster r(static_cast<int>(w), static_cast<int>(h), channels);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = data[pos + i];
    if (v > maxval) fail("pnm: sample exceeds maxval");
    r.pixels[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return r;
}

inline std::vector<std::uint8_t> encode_pnm(const Raster& r) {
  const std::string header =
      std::string(r.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(r.width) + " " + std::to_string(r.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + r.pixels.size());
  for (double v : r.pixels) out.push_back(quantize(v));
  return out;
}

// ---- PNG (libpng) ----------------------------------------------------------

struct PngReadBuffer {
  std::span<const std::uint8_t> data;
  std::size_t pos = 0;
};

inline void png_read_from_buffer(png_structp png, png_bytep out, png_size_t len) {
  auto* buf = static_cast<PngReadBuffer*>(png_get_io_ptr(png));
  if (buf->data.size() - buf->pos < len) png_error(png, "truncated PNG stream");
  std::copy_n(buf->data.data() + buf->pos, len, out);
  buf->pos += len;
}

inline void png_write_to_vector(png_structp png, png_bytep in, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), in, in + len);
}

inline void png_flush_noop(png_structp) {}

inline void png_silent_warning(png_structp, png_const_charp) {}

inline Raster decode_png(std::span<const std::uint8_t> data) {
  if (data.size() < 8 || png_sig_cmp(data.data(), 0, 8) != 0) {
    throw FormatError(FormatCode::unsupported_format, "not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_silent_warning);
  if (!png) throw FormatError(FormatCode::io, "png: cannot allocate reader");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw FormatError(FormatCode::io, "png: cannot allocate info");
  }

  PngReadBuffer buf{data, 0};
  Raster raster;
  std::vector<std::uint8_t> rows;
  std::vector<png_bytep> row_ptrs;
  // libpng reports errors through longjmp; every object with a destructor
  // is constructed before setjmp so the jump never skips one.
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(FormatCode::corrupt_header, "png: corrupt or truncated stream");
  }
  png_set_read_fn(png, &buf, png_read_from_buffer);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(FormatCode::unsupported_format, "png: unsupported channel layout");
  }
  const std::uint64_t samples = std::uint64_t{w} * h * static_cast<std::uint64_t>(channels);
  if (w == 0 || h == 0 || samples > kMaxSamples) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(FormatCode::dimension_overflow, "png: image dimensions too large");
  }

  const std::size_t stride = png_get_rowbytes(png, info);
  rows.resize(stride * h);
  row_ptrs.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) row_ptrs[y] = rows.data() + y * stride;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  raster = Raster(static_cast<int>(w), static_cast<int>(h), channels);
  for (png_uint_32 y = 0; y < h; ++y) {
    for (std::size_t i = 0; i < std::size_t{w} * channels; ++i) {
      raster.pixels[y * std::size_t{w} * channels + i] = rows[y * stride + i] / 255.0;
    }
  }
  return raster;
}

inline std::vector<std::uint8_t> encode_png(const Raster& r) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_silent_warning);
  if (!png) throw FormatError(FormatCode::io, "png: cannot allocate writer");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw FormatError(FormatCode::io, "png: cannot allocate info");
  }
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> rows(r.pixels.size());
  std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(r.height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError(FormatCode::io, "png: encoding failed");
  }
  for (std::size_t i = 0; i < r.pixels.size(); ++i) rows[i] = quantize(r.pixels[i]);
  const std::size_t stride = static_cast<std::size_t>(r.width) * r.channels;
  for (int y = 0; y < r.height; ++y) row_ptrs[static_cast<std::size_t>(y)] = rows.data() + y * stride;

  png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(r.width), static_cast<png_uint_32>(r.height), 8,
               r.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace detail

// Decodes by content signature (PNG or binary PGM/PPM).
inline Raster decode_raster(std::span<const std::uint8_t> data) {
  if (data.size() >= 8 && png_sig_cmp(data.data(), 0, 8) == 0) return detail::decode_png(data);
  if (data.size() >= 2 && data[0] == 'P') return detail::decode_pnm(data);
  if (data.size() < 2) throw FormatError(FormatCode::corrupt_header, "file too short to identify");
  throw FormatError(FormatCode::unsupported_format, "unrecognized image format");
}

inline Raster load_raster(const std::filesystem::path& path) { return decode_raster(io::read_file(path)); }

// Format follows the extension: .png, or .pgm/.ppm/.pnm (binary PNM).
inline void save_raster(const Raster& r, const std::filesystem::path& path) {
  validate(r);
  if (detail::has_extension(path, {".png"})) {
    io::write_file(path, detail::encode_png(r));
  } else if (detail::has_extension(path, {".pgm", ".ppm", ".pnm"})) {
    if (r.channels == 1 && detail::has_extension(path, {".ppm"})) {
      throw InvalidArgument("save_raster: .ppm requires a 3-channel raster");
    }
    if (r.channels == 3 && detail::has_extension(path, {".pgm"})) {
      throw InvalidArgument("save_raster: .pgm requires a 1-channel raster");
    }
    io::write_file(path, detail::encode_pnm(r));
  } else {
    throw FormatError(FormatCode::unsupported_format, "unsupported output extension: " + path.string());
  }
}

}  // namespace eside
