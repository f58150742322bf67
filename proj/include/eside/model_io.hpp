#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "eside/binary_io.hpp"
#include "eside/error.hpp"
#include "eside/mlp.hpp"

namespace eside::mlp {

// EMLP, little-endian:
//   "EMLP", u32 version = 1, u32 linear layer count L, (L+1) x u32 dims,
//   for each linear layer: f32 weights (out x in, row-major), f32 biases,
//   for each hidden layer: f32 gamma, beta, running mean, running var,
//   u32 CRC32 of everything before it.
// Activation slope, dropout rate and batch-norm momentum/eps are not stored;
// a loaded model carries the defaults.

inline constexpr std::uint32_t kEmlpVersion = 1;

template <typename Scalar>
std::vector<std::uint8_t> encode_model(const MlpModel<Scalar>& m) {
  io::ByteWriter w;
  w.magic("EMLP");
  w.u32(kEmlpVersion);
  w.u32(static_cast<std::uint32_t>(m.linear.size()));
  for (int d : m.dims) w.u32(static_cast<std::uint32_t>(d));
  for (const auto& l : m.linear) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w.f32(static_cast<float>(l.weight(r, c)));
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) w.f32(static_cast<float>(l.bias(i)));
  }
  for (const auto& n : m.norm) {
    for (const auto* v : {&n.gamma, &n.beta, &n.running_mean, &n.running_var})
      for (Eigen::Index i = 0; i < v->size(); ++i) w.f32(static_cast<float>((*v)(i)));
  }
  w.crc_trailer();
  return w.take();
}

inline MlpModel<float> decode_model(std::span<const std::uint8_t> file) {
  io::ByteReader head(file);
  head.expect_magic("EMLP");
  const auto version = head.u32();
  if (version != kEmlpVersion) {
    throw FormatError(FormatCode::version_mismatch, "EMLP version " + std::to_string(version) + " (expected 1)");
  }
  const auto payload = io::verify_crc_trailer(file);
  io::ByteReader r(payload);
  r.expect_magic("EMLP");
  r.u32();
  const auto layers = r.u32();
  if (layers < 2 || layers > 64) throw FormatError(FormatCode::corrupt_header, "EMLP: implausible layer count");
  MlpModel<float> m;
  std::uint64_t floats = 0;
  for (std::uint32_t i = 0; i <= layers; ++i) {
    const auto d = r.u32();
    if (d == 0 || d > (1u << 20)) throw FormatError(FormatCode::corrupt_header, "EMLP: implausible layer dim");
    m.dims.push_back(static_cast<int>(d));
  }
  for (std::uint32_t i = 0; i < layers; ++i) floats += std::uint64_t(m.dims[i] + 1) * m.dims[i + 1];
  for (std::uint32_t i = 1; i < layers; ++i) floats += 4ull * m.dims[i];
  if (floats * 4 != r.remaining()) throw FormatError(FormatCode::length_mismatch, "EMLP: payload size does not match dims");

  auto read_finite = [&] {
    const float v = r.f32();
    if (!std::isfinite(v)) throw FormatError(FormatCode::non_finite, "EMLP: non-finite parameter");
    return v;
  };
  for (std::uint32_t l = 0; l < layers; ++l) {
    MlpModel<float>::Linear lin;
    const int in = m.dims[l];
    const int out = m.dims[l + 1];
    lin.weight.resize(out, in);
    for (int rr = 0; rr < out; ++rr)
      for (int c = 0; c < in; ++c) lin.weight(rr, c) = read_finite();
    lin.bias.resize(out);
    for (int i = 0; i < out; ++i) lin.bias(i) = read_finite();
    m.linear.push_back(std::move(lin));
  }
  for (std::uint32_t l = 1; l < layers; ++l) {
    const int n = m.dims[l];
    MlpModel<float>::BatchNorm bn;
    for (auto* v : {&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var}) {
      v->resize(n);
      for (int i = 0; i < n; ++i) (*v)(i) = read_finite();
    }
    if ((bn.running_var.array() < 0).any()) throw FormatError(FormatCode::corrupt_header, "EMLP: negative running variance");
    m.norm.push_back(std::move(bn));
  }
  return m;
}

template <typename Scalar>
void save_model(const MlpModel<Scalar>& m, const std::filesystem::path& path) {
  io::write_file(path, encode_model(m));
}

inline MlpModel<float> load_model(const std::filesystem::path& path) { return decode_model(io::read_file(path)); }

}  // namespace eside::mlp
