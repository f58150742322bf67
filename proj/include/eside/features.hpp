#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "eside/binary_io.hpp"
#include "eside/error.hpp"
#include "eside/rng.hpp"

namespace eside {

inline constexpr std::int8_t kSynthetic = +1;
inline constexpr std::int8_t kNatural = -1;

// Per-image, per-timestep feature vectors. values is laid out
// [image][timestep][dim].
struct FeatureDataset {
  std::uint32_t dim = 0;
  std::vector<std::uint32_t> timesteps;
  std::vector<std::int8_t> labels;
  std::vector<std::string> tags;
  std::vector<float> values;

  std::size_t n_images() const { return labels.size(); }
  std::size_t n_timesteps() const { return timesteps.size(); }

  std::size_t timestep_index(std::uint32_t t) const {
    const auto it = std::find(timesteps.begin(), timesteps.end(), t);
    if (it == timesteps.end()) throw InvalidArgument("dataset has no timestep " + std::to_string(t));
    return static_cast<std::size_t>(it - timesteps.begin());
  }

  bool has_timestep(std::uint32_t t) const {
    return std::find(timesteps.begin(), timesteps.end(), t) != timesteps.end();
  }

  std::span<const float> vector(std::size_t image, std::size_t ti) const {
    return std::span<const float>(values).subspan((image * n_timesteps() + ti) * dim, dim);
  }

  std::span<float> vector(std::size_t image, std::size_t ti) {
    return std::span<float>(values).subspan((image * n_timesteps() + ti) * dim, dim);
  }

  // Row-major n_images x dim matrix of the features at timestep t.
  std::vector<float> timestep_rows(std::uint32_t t) const {
    const auto ti = timestep_index(t);
    std::vector<float> out;
    out.reserve(n_images() * dim);
    for (std::size_t i = 0; i < n_images(); ++i) {
      const auto v = vector(i, ti);
      out.insert(out.end(), v.begin(), v.end());
    }
    return out;
  }

  // Subset in the given order.
  FeatureDataset select(std::span<const std::size_t> images) const {
    FeatureDataset out;
    out.dim = dim;
    out.timesteps = timesteps;
    const std::size_t stride = n_timesteps() * dim;
    for (auto i : images) {
      out.labels.push_back(labels.at(i));
      out.tags.push_back(tags.at(i));
      out.values.insert(out.values.end(), values.begin() + static_cast<std::ptrdiff_t>(i * stride),
                        values.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
    }
    return out;
  }

  friend bool operator==(const FeatureDataset&, const FeatureDataset&) = default;
};

inline void validate(const FeatureDataset& ds) {
  if (ds.dim == 0) throw InvalidArgument("dataset: dim must be positive");
  if (ds.timesteps.empty()) throw InvalidArgument("dataset: no timesteps");
  for (std::size_t i = 1; i < ds.timesteps.size(); ++i) {
    if (ds.timesteps[i] <= ds.timesteps[i - 1]) throw InvalidArgument("dataset: timesteps must be strictly increasing");
  }
  if (ds.tags.size() != ds.labels.size()) throw InvalidArgument("dataset: tags/labels length mismatch");
  if (ds.values.size() != ds.labels.size() * ds.timesteps.size() * ds.dim) {
    throw InvalidArgument("dataset: value count does not match shape");
  }
  for (auto l : ds.labels) {
    if (l != kSynthetic && l != kNatural) throw InvalidArgument("dataset: labels must be +1 or -1");
  }
  for (const auto& t : ds.tags) {
    if (t.size() > 0xFFFF) throw InvalidArgument("dataset: tag longer than 65535 bytes");
  }
  for (float v : ds.values) {
    if (!std::isfinite(v)) throw InvalidArgument("dataset: non-finite feature value");
  }
}

// ---- ESF1 -----------------------------------------------------------------
//
// Little-endian: "ESF1", u32 version = 1, u32 n_images, u32 dim,
// u32 n_timesteps, n_timesteps x u32 timestep ids, then per image: i8 label,
// u16 tag length, tag bytes, n_timesteps*dim f32. Trailer: u32 CRC32 of all
// preceding bytes.

inline constexpr std::uint32_t kEsfVersion = 1;

inline std::vector<std::uint8_t> encode_esf(const FeatureDataset& ds) {
  validate(ds);
  io::ByteWriter w;
  w.magic("ESF1");
  w.u32(kEsfVersion);
  w.u32(static_cast<std::uint32_t>(ds.n_images()));
  w.u32(ds.dim);
  w.u32(static_cast<std::uint32_t>(ds.n_timesteps()));
  for (auto t : ds.timesteps) w.u32(t);
  const std::size_t stride = ds.n_timesteps() * ds.dim;
  for (std::size_t i = 0; i < ds.n_images(); ++i) {
    w.i8(ds.labels[i]);
    w.u16(static_cast<std::uint16_t>(ds.tags[i].size()));
    w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(ds.tags[i].data()), ds.tags[i].size()));
    w.f32s(std::span<const float>(ds.values).subspan(i * stride, stride));
  }
  w.crc_trailer();
  return w.take();
}

inline FeatureDataset decode_esf(std::span<const std::uint8_t> file) {
  io::ByteReader head(file);
  head.expect_magic("ESF1");
  const auto version = head.u32();
  if (version != kEsfVersion) {
    throw FormatError(FormatCode::version_mismatch, "ESF version " + std::to_string(version) + " (expected 1)");
  }
  const auto payload = io::verify_crc_trailer(file);
  io::ByteReader r(payload);
  r.expect_magic("ESF1");
  r.u32();
  FeatureDataset ds;
  const auto n_images = r.u32();
  ds.dim = r.u32();
  const auto n_t = r.u32();
  if (ds.dim == 0 || n_t == 0) throw FormatError(FormatCode::corrupt_header, "ESF: zero dim or timestep count");
  const std::uint64_t stride = std::uint64_t{n_t} * ds.dim;
  // Each record needs at least 3 + 4*stride bytes; reject impossible headers
  // before allocating.
  if (std::uint64_t{n_images} * (3 + 4 * stride) > r.remaining()) {
    throw FormatError(FormatCode::length_mismatch, "ESF: header promises more records than the file holds");
  }
  for (std::uint32_t i = 0; i < n_t; ++i) ds.timesteps.push_back(r.u32());
  ds.values.reserve(n_images * stride);
  for (std::uint32_t i = 0; i < n_images; ++i) {
    ds.labels.push_back(r.i8());
    const auto len = r.u16();
    const auto tag = r.take(len);
    ds.tags.emplace_back(tag.begin(), tag.end());
    for (std::uint64_t j = 0; j < stride; ++j) {
      const float v = r.f32();
      if (!std::isfinite(v)) throw FormatError(FormatCode::non_finite, "ESF: non-finite feature value");
      ds.values.push_back(v);
    }
  }
  if (r.remaining() != 0) throw FormatError(FormatCode::length_mismatch, "ESF: trailing bytes after last record");
  try {
    validate(ds);
  } catch (const InvalidArgument& e) {
    throw FormatError(FormatCode::corrupt_header, std::string("ESF: ") + e.what());
  }
  return ds;
}

inline void write_esf(const FeatureDataset& ds, const std::filesystem::path& path) {
  io::write_file(path, encode_esf(ds));
}

inline FeatureDataset read_esf(const std::filesystem::path& path) { return decode_esf(io::read_file(path)); }

// ---- synthetic features -----------------------------------------------------

struct SynthConfig {
  std::size_t n_per_class = 100;
  std::uint32_t dim = 768;
  std::vector<std::uint32_t> timesteps = {0, 3, 6, 9, 12, 15, 18, 21, 24};
  double gap = 3.0;
  double overlap_frac = 0.0;
  std::uint64_t seed = 42;
};

// Timesteps at which an overlapped image is drawn from the opposing class.
inline std::size_t flipped_timestep_count(std::size_t n_timesteps) {
  return std::max<std::size_t>(1, n_timesteps / 4);
}

// Two unit-covariance Gaussian classes whose means sit at +/- gap/2 along a
// random unit direction chosen per timestep. In each class, a fraction
// overlap_frac of images (tagged "hard") is drawn around the opposing mean
// at a random subset of flipped_timestep_count() timesteps; the other
// images are tagged "original". Synthetic images come first.
inline FeatureDataset synth_features(const SynthConfig& cfg) {
  if (cfg.n_per_class < 1) throw InvalidArgument("synth_features: n_per_class must be >= 1");
  if (!(cfg.gap >= 0.0)) throw InvalidArgument("synth_features: gap must be >= 0");
  if (!(cfg.overlap_frac >= 0.0 && cfg.overlap_frac <= 1.0)) {
    throw InvalidArgument("synth_features: overlap_frac must lie in [0, 1]");
  }
  if (cfg.dim == 0) throw InvalidArgument("synth_features: dim must be positive");
  if (cfg.timesteps.empty()) throw InvalidArgument("synth_features: no timesteps");

  Rng rng(cfg.seed);
  const std::size_t n_t = cfg.timesteps.size();
  std::vector<std::vector<double>> directions(n_t, std::vector<double>(cfg.dim));
  for (auto& u : directions) {
    double norm = 0.0;
    for (double& v : u) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : u) v /= norm;
  }

  FeatureDataset ds;
  ds.dim = cfg.dim;
  ds.timesteps = cfg.timesteps;
  const std::size_t n = 2 * cfg.n_per_class;
  ds.labels.resize(n);
  ds.tags.assign(n, "original");
  ds.values.resize(n * n_t * cfg.dim);

  // flips[i][k] = image i is drawn from the opposing class at timestep k.
  std::vector<std::vector<bool>> flips(n, std::vector<bool>(n_t, false));
  const auto n_overlap = static_cast<std::size_t>(std::llround(cfg.overlap_frac * static_cast<double>(cfg.n_per_class)));
  const std::size_t n_flip = std::min(flipped_timestep_count(n_t), n_t);
  for (int cls = 0; cls < 2; ++cls) {
    std::vector<std::size_t> members(cfg.n_per_class);
    for (std::size_t j = 0; j < cfg.n_per_class; ++j) members[j] = cls * cfg.n_per_class + j;
    rng.shuffle(members.begin(), members.end());
    for (std::size_t j = 0; j < n_overlap; ++j) {
      const auto img = members[j];
      ds.tags[img] = "hard";
      std::vector<std::size_t> order(n_t);
      for (std::size_t k = 0; k < n_t; ++k) order[k] = k;
      rng.shuffle(order.begin(), order.end());
      for (std::size_t k = 0; k < n_flip; ++k) flips[img][order[k]] = true;
    }
  }

  const double half_gap = 0.5 * cfg.gap;
  for (std::size_t i = 0; i < n; ++i) {
    const std::int8_t label = i < cfg.n_per_class ? kSynthetic : kNatural;
    ds.labels[i] = label;
    for (std::size_t k = 0; k < n_t; ++k) {
      const double side = (flips[i][k] ? -1.0 : 1.0) * static_cast<double>(label);
      auto v = ds.vector(i, k);
      for (std::uint32_t d = 0; d < cfg.dim; ++d) {
        v[d] = static_cast<float>(side * half_gap * directions[k][d] + rng.normal());
      }
    }
  }
  return ds;
}

// Stratified seeded split. Within each class the images are shuffled and
// the first round(train_frac * n_class) go to the training side; both
// sides keep the original relative order.
inline std::pair<FeatureDataset, FeatureDataset> split(const FeatureDataset& ds, double train_frac,
                                                       std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw InvalidArgument("split: train_frac must lie in (0, 1)");
  Rng rng(seed);
  std::vector<std::size_t> train, test;
  for (const std::int8_t cls : {kSynthetic, kNatural}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.n_images(); ++i)
      if (ds.labels[i] == cls) members.push_back(i);
    rng.shuffle(members.begin(), members.end());
    const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(members.size())));
    train.insert(train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    test.insert(test.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  }
  if (train.empty() || test.empty()) throw InvalidArgument("split: one side would be empty");
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {ds.select(train), ds.select(test)};
}

}  // namespace eside
