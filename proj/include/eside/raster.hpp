#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "eside/error.hpp"
#include "eside/rng.hpp"

namespace eside {

// Image with samples in [0,1], row-major, channels interleaved.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> pixels;

  Raster() = default;
  Raster(int w, int h, int c, double fill = 0.0) : width(w), height(h), channels(c) {
    if (w < 1 || h < 1) throw InvalidArgument("raster: dimensions must be positive");
    if (c != 1 && c != 3) throw InvalidArgument("raster: channels must be 1 or 3");
    pixels.assign(static_cast<std::size_t>(w) * h * c, fill);
  }

  std::size_t size() const { return pixels.size(); }
  bool empty() const { return pixels.empty(); }

  double& at(int x, int y, int c = 0) { return pixels[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return pixels[index(x, y, c)]; }

  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }

  friend bool operator==(const Raster&, const Raster&) = default;
};

inline void validate(const Raster& r) {
  if (r.pixels.size() != static_cast<std::size_t>(r.width) * r.height * r.channels) {
    throw InvalidArgument("raster: pixel count does not match dimensions");
  }
  for (double v : r.pixels) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("raster: sample outside [0,1]");
  }
}

// Rec.601 luma; grayscale input is returned unchanged.
inline Raster to_grayscale(const Raster& r) {
  if (r.channels == 1) return r;
  Raster g(r.width, r.height, 1);
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      const double v = 0.299 * r.at(x, y, 0) + 0.587 * r.at(x, y, 1) + 0.114 * r.at(x, y, 2);
      g.at(x, y) = std::clamp(v, 0.0, 1.0);
    }
  }
  return g;
}

inline Raster extract_channel(const Raster& r, int c) {
  Raster out(r.width, r.height, 1);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) out.at(x, y) = r.at(x, y, c);
  return out;
}

inline void insert_channel(Raster& dst, const Raster& plane, int c) {
  for (int y = 0; y < dst.height; ++y)
    for (int x = 0; x < dst.width; ++x) dst.at(x, y, c) = plane.at(x, y);
}

// Normalized 1-D Gaussian taps for offsets -radius..radius, radius = ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw InvalidArgument("gaussian_blur: sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable blur with clamp-to-edge borders.
inline Raster gaussian_blur(const Raster& r, double sigma) {
  const auto kernel = gaussian_kernel(sigma);
  const int radius = static_cast<int>(kernel.size() / 2);
  Raster tmp(r.width, r.height, r.channels);
  Raster out(r.width, r.height, r.channels);
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      for (int c = 0; c < r.channels; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int sx = std::clamp(x + i, 0, r.width - 1);
          acc += kernel[static_cast<std::size_t>(i + radius)] * r.at(sx, y, c);
        }
        tmp.at(x, y, c) = acc;
      }
    }
  }
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      for (int c = 0; c < r.channels; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int sy = std::clamp(y + i, 0, r.height - 1);
          acc += kernel[static_cast<std::size_t>(i + radius)] * tmp.at(x, sy, c);
        }
        out.at(x, y, c) = std::clamp(acc, 0.0, 1.0);
      }
    }
  }
  return out;
}

// Rotation about the image center with bilinear sampling. Positive angles
// turn the content counter-clockwise as displayed (y axis pointing down).
// Samples falling outside the source read as 0; the canvas keeps its size.
inline Raster rotate(const Raster& r, double theta_degrees) {
  if (!(std::abs(theta_degrees) <= 180.0)) throw InvalidArgument("rotate: |theta| must be <= 180");
  const double th = theta_degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(th);
  const double sn = std::sin(th);
  const double cx = 0.5 * (r.width - 1);
  const double cy = 0.5 * (r.height - 1);
  Raster out(r.width, r.height, r.channels);

  auto sample = [&](int x, int y, int c) -> double {
    if (x < 0 || y < 0 || x >= r.width || y >= r.height) return 0.0;
    return r.at(x, y, c);
  };

  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      // Inverse map: output pixel -> source location.
      const double dx = x - cx;
      const double dy = y - cy;
      const double sx = cx + cs * dx - sn * dy;
      const double sy = cy + sn * dx + cs * dy;
      // Snap values within rounding noise of an integer so exact
      // permutations (multiples of 90 degrees) stay exact.
      const double fx0 = std::abs(sx - std::round(sx)) < 1e-9 ? std::round(sx) : sx;
      const double fy0 = std::abs(sy - std::round(sy)) < 1e-9 ? std::round(sy) : sy;
      const int x0 = static_cast<int>(std::floor(fx0));
      const int y0 = static_cast<int>(std::floor(fy0));
      const double fx = fx0 - x0;
      const double fy = fy0 - y0;
      for (int c = 0; c < r.channels; ++c) {
        const double v = (1 - fx) * (1 - fy) * sample(x0, y0, c) + fx * (1 - fy) * sample(x0 + 1, y0, c) +
                         (1 - fx) * fy * sample(x0, y0 + 1, c) + fx * fy * sample(x0 + 1, y0 + 1, c);
        out.at(x, y, c) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return out;
}

inline Raster brightness(const Raster& r, double alpha) {
  if (!(alpha > 0.0)) throw InvalidArgument("brightness: alpha must be positive");
  Raster out = r;
  for (double& v : out.pixels) v = std::clamp(alpha * v, 0.0, 1.0);
  return out;
}

struct PerturbParams {
  double sigma = 0.0;
  double theta = 0.0;
  double alpha = 1.0;
  std::uint64_t seed = 0;
};

struct PerturbRanges {
  double sigma_lo = 0.5, sigma_hi = 2.5;
  double theta_lo = -45.0, theta_hi = 45.0;
  double alpha_lo = 0.3, alpha_hi = 1.8;
};

// Draws (sigma, theta, alpha) from a generator seeded with `seed`.
inline PerturbParams sample_perturbation(std::uint64_t seed, const PerturbRanges& ranges = {}) {
  Rng rng(seed);
  PerturbParams p;
  p.seed = seed;
  p.sigma = rng.uniform(ranges.sigma_lo, ranges.sigma_hi);
  p.theta = rng.uniform(ranges.theta_lo, ranges.theta_hi);
  p.alpha = rng.uniform(ranges.alpha_lo, ranges.alpha_hi);
  return p;
}

inline Raster apply_perturbation(const Raster& r, const PerturbParams& p) {
  return brightness(rotate(gaussian_blur(r, p.sigma), p.theta), p.alpha);
}

struct PerturbResult {
  Raster image;
  PerturbParams params;
};

// Blur, then rotate, then brightness, with parameters drawn from `seed`.
inline PerturbResult perturb_suite(const Raster& r, std::uint64_t seed) {
  const auto params = sample_perturbation(seed);
  return {apply_perturbation(r, params), params};
}

}  // namespace eside
