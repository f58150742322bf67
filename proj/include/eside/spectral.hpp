#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <memory>
#include <mutex>
#include <ostream>
#include <span>
#include <vector>

#include "eside/error.hpp"
#include "eside/grid.hpp"
#include "eside/histogram.hpp"
#include "eside/raster.hpp"

namespace eside::spectral {

using Complex = std::complex<double>;

// 2-D DFT coefficients in DC-centered layout: bin (row, col) holds
// frequency (row - height/2, col - width/2), integer division, the same
// arrangement as numpy.fft.fftshift.
//
// Normalization: the forward transform is unnormalized and the inverse
// divides by width*height, so sum |X|^2 = width * height * sum x^2.
struct Spectrum {
  Grid<Complex> coeffs;

  int width() const { return coeffs.width; }
  int height() const { return coeffs.height; }
  int center_row() const { return coeffs.height / 2; }
  int center_col() const { return coeffs.width / 2; }

  // Bin holding the complex conjugate frequency for a real source.
  std::pair<int, int> conjugate_of(int row, int col) const {
    const int h = height();
    const int w = width();
    const int r = ((2 * center_row() - row) % h + h) % h;
    const int c = ((2 * center_col() - col) % w + w) % w;
    return {r, c};
  }
};

namespace detail {

inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

// Unshifted in-place-style transform: out = DFT(in) with the given sign.
inline std::vector<Complex> dft2(std::span<const Complex> in, int w, int h, int sign) {
  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::unique_ptr<fftw_complex, FftwFree> a(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n)));
  std::unique_ptr<fftw_complex, FftwFree> b(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n)));
  if (!a || !b) throw std::bad_alloc();
  fftw_plan plan;
  {
    // The FFTW planner is not thread-safe; execution is.
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_2d(h, w, a.get(), b.get(), sign, FFTW_ESTIMATE);
  }
  for (std::size_t i = 0; i < n; ++i) {
    a.get()[i][0] = in[i].real();
    a.get()[i][1] = in[i].imag();
  }
  fftw_execute(plan);
  std::vector<Complex> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = Complex(b.get()[i][0], b.get()[i][1]);
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  return out;
}

inline int shift_source(int shifted, int n) { return ((shifted - n / 2) % n + n) % n; }

}  // namespace detail

inline Spectrum fft2(const Grid<double>& image) {
  if (image.width < 2 || image.height < 2) throw InvalidArgument("fft2: image must be at least 2x2");
  const int w = image.width;
  const int h = image.height;
  std::vector<Complex> in(image.data.begin(), image.data.end());
  const auto raw = detail::dft2(in, w, h, FFTW_FORWARD);
  Spectrum s{Grid<Complex>(w, h)};
  for (int r = 0; r < h; ++r) {
    const int sr = detail::shift_source(r, h);
    for (int c = 0; c < w; ++c) {
      const int sc = detail::shift_source(c, w);
      s.coeffs(r, c) = raw[static_cast<std::size_t>(sr) * w + sc];
    }
  }
  return s;
}

inline Grid<double> raster_plane(const Raster& r) {
  if (r.empty()) throw InvalidArgument("fft2: empty raster");
  const Raster g = to_grayscale(r);
  Grid<double> out(g.width, g.height);
  out.data = g.pixels;
  return out;
}

// Color input is reduced to Rec.601 luma first.
inline Spectrum fft2(const Raster& r) { return fft2(raster_plane(r)); }

// Full complex inverse (imaginary parts kept for diagnostics).
inline Grid<Complex> ifft2_complex(const Spectrum& s) {
  const int w = s.width();
  const int h = s.height();
  std::vector<Complex> unshifted(static_cast<std::size_t>(w) * h);
  for (int r = 0; r < h; ++r) {
    const int sr = detail::shift_source(r, h);
    for (int c = 0; c < w; ++c) {
      unshifted[static_cast<std::size_t>(sr) * w + detail::shift_source(c, w)] = s.coeffs(r, c);
    }
  }
  auto raw = detail::dft2(unshifted, w, h, FFTW_BACKWARD);
  const double scale = 1.0 / (static_cast<double>(w) * h);
  Grid<Complex> out(w, h);
  for (std::size_t i = 0; i < raw.size(); ++i) out.data[i] = raw[i] * scale;
  return out;
}

inline Grid<double> ifft2_real(const Spectrum& s) {
  const auto z = ifft2_complex(s);
  Grid<double> out(z.width, z.height);
  for (std::size_t i = 0; i < z.size(); ++i) out.data[i] = z.data[i].real();
  return out;
}

// Real part, clamped to [0,1].
inline Raster ifft2(const Spectrum& s) {
  const auto re = ifft2_real(s);
  Raster out(re.width, re.height, 1);
  for (std::size_t i = 0; i < re.size(); ++i) out.pixels[i] = std::clamp(re.data[i], 0.0, 1.0);
  return out;
}

inline Grid<double> power_grid(const Spectrum& s) {
  Grid<double> p(s.width(), s.height());
  for (std::size_t i = 0; i < p.size(); ++i) p.data[i] = std::norm(s.coeffs.data[i]);
  return p;
}

// log(1 + power), for display.
inline Grid<double> log_power(const Grid<double>& power) {
  Grid<double> out(power.width, power.height);
  for (std::size_t i = 0; i < power.size(); ++i) out.data[i] = std::log1p(power.data[i]);
  return out;
}

// true = protected: within bandwidth*height rows of the center row, or
// bandwidth*width columns of the center column.
inline Grid<std::uint8_t> axis_mask(int width, int height, double bandwidth) {
  if (!(bandwidth >= 0.0 && bandwidth <= 0.5)) throw InvalidArgument("axis_mask: bandwidth must lie in [0, 0.5]");
  if (width < 1 || height < 1) throw InvalidArgument("axis_mask: dimensions must be positive");
  constexpr double slack = 1e-9;
  const double row_band = bandwidth * height + slack;
  const double col_band = bandwidth * width + slack;
  const int cr = height / 2;
  const int cc = width / 2;
  Grid<std::uint8_t> mask(width, height, 0);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      mask(r, c) = (std::abs(r - cr) <= row_band || std::abs(c - cc) <= col_band) ? 1 : 0;
    }
  }
  return mask;
}

struct Bin {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const Bin&, const Bin&) = default;
};

struct PeakSelection {
  std::vector<Bin> peaks;  // sorted by (row, col)
  double threshold = 0.0;
  bool all_protected = false;  // warning: nothing was eligible
};

// Number of bins making up the top `percentile` fraction of n, rounded up,
// never less than one.
inline std::size_t top_count(double percentile, std::size_t n) {
  if (n == 0) return 0;
  const double k = std::ceil(percentile * static_cast<double>(n) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(k, 1.0)), 1, n);
}

// Unprotected bins whose power reaches the value of the k-th largest
// unprotected power, k = top_count(percentile, #unprotected). Ties at the
// threshold are all kept.
inline PeakSelection top_percentile_peaks(const Grid<double>& power, double percentile,
                                          const Grid<std::uint8_t>& mask) {
  if (!(percentile > 0.0 && percentile < 1.0)) throw InvalidArgument("peaks: percentile must lie in (0, 1)");
  if (mask.width != power.width || mask.height != power.height) throw InvalidArgument("peaks: mask shape mismatch");
  PeakSelection sel;
  std::vector<double> free;
  free.reserve(power.size());
  for (std::size_t i = 0; i < power.size(); ++i)
    if (!mask.data[i]) free.push_back(power.data[i]);
  if (free.empty()) {
    sel.all_protected = true;
    return sel;
  }
  const std::size_t k = top_count(percentile, free.size());
  std::nth_element(free.begin(), free.begin() + static_cast<std::ptrdiff_t>(k - 1), free.end(), std::greater<>());
  sel.threshold = free[k - 1];
  for (int r = 0; r < power.height; ++r) {
    for (int c = 0; c < power.width; ++c) {
      if (!mask(r, c) && power(r, c) >= sel.threshold) sel.peaks.push_back({r, c});
    }
  }
  return sel;
}

// Scales each peak and its conjugate partner by sqrt(ratio), i.e. their
// energy by `ratio`. Phases are untouched; each bin is scaled once even
// when both members of a pair are listed.
inline Spectrum suppress(const Spectrum& s, std::span<const Bin> peaks, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw InvalidArgument("suppress: ratio must lie in [0, 1]");
  Spectrum out = s;
  Grid<std::uint8_t> hit(s.width(), s.height(), 0);
  for (const auto& p : peaks) {
    if (!s.coeffs.contains(p.row, p.col)) throw InvalidArgument("suppress: peak outside grid");
    hit(p.row, p.col) = 1;
    const auto [r, c] = s.conjugate_of(p.row, p.col);
    hit(r, c) = 1;
  }
  const double scale = std::sqrt(ratio);
  for (std::size_t i = 0; i < hit.size(); ++i)
    if (hit.data[i]) out.coeffs.data[i] *= scale;
  return out;
}

// Histogram of log10(power + 1e-12) over unprotected bins.
inline Histogram energy_histogram(const Grid<double>& power, const Grid<std::uint8_t>& mask, int nbins) {
  if (nbins < 1) throw InvalidArgument("energy_histogram: nbins must be >= 1");
  if (mask.width != power.width || mask.height != power.height) {
    throw InvalidArgument("energy_histogram: mask shape mismatch");
  }
  std::vector<double> levels;
  for (std::size_t i = 0; i < power.size(); ++i)
    if (!mask.data[i]) levels.push_back(std::log10(power.data[i] + 1e-12));
  return make_histogram(levels, nbins);
}

struct SuppressionKnobs {
  double bandwidth = 0.06;
  double ratio = 0.1;
  double percentile = 0.15;
};

struct SuppressionReport {
  Raster image;
  std::size_t peak_count = 0;
  bool all_protected = false;
};

// Peaks are picked on the luma spectrum, then the same bins are suppressed
// in every channel before reconstruction.
inline SuppressionReport suppress_image(const Raster& img, const SuppressionKnobs& knobs) {
  const auto luma = fft2(img);
  const auto mask = axis_mask(img.width, img.height, knobs.bandwidth);
  const auto sel = top_percentile_peaks(power_grid(luma), knobs.percentile, mask);
  SuppressionReport rep;
  rep.peak_count = sel.peaks.size();
  rep.all_protected = sel.all_protected;
  rep.image = Raster(img.width, img.height, img.channels);
  for (int c = 0; c < img.channels; ++c) {
    const Raster plane = img.channels == 1 ? img : extract_channel(img, c);
    const auto spec = img.channels == 1 ? luma : fft2(plane);
    const Raster rec = ifft2(suppress(spec, sel.peaks, knobs.ratio));
    insert_channel(rep.image, rec, c);
  }
  return rep;
}

inline void write_grid_csv(std::ostream& out, const Grid<double>& g) {
  const auto old_precision = out.precision(17);
  for (int r = 0; r < g.height; ++r) {
    for (int c = 0; c < g.width; ++c) {
      if (c) out << ',';
      out << g(r, c);
    }
    out << '\n';
  }
  out.precision(old_precision);
}

// Min-max normalized heatmap, suitable for save_raster as PGM.
inline Raster heatmap(const Grid<double>& g) {
  Raster out(g.width, g.height, 1);
  const auto [mn, mx] = std::minmax_element(g.data.begin(), g.data.end());
  const double span = *mx - *mn;
  for (std::size_t i = 0; i < g.size(); ++i) out.pixels[i] = span > 0 ? (g.data[i] - *mn) / span : 0.0;
  return out;
}

}  // namespace eside::spectral
