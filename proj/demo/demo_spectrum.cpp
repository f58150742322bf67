// Plants a periodic high-frequency pattern in a smooth image, finds it in the
// power spectrum and suppresses it.

#include <cmath>
#include <cstdio>
#include <numbers>

#include "eside/eside.hpp"

int main(int argc, char** argv) {
  using namespace eside;
  const int n = 64;
  Raster img(n, n, 1);
  Rng rng(7);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double smooth = 0.5 + 0.2 * std::sin(2 * std::numbers::pi * x / n) * std::cos(2 * std::numbers::pi * y / n);
      const double grid = 0.05 * std::cos(2 * std::numbers::pi * (20.0 * x + 17.0 * y) / n);
      img.at(x, y, 0) = smooth + grid + 0.01 * rng.normal();
    }
  }

  const auto power = spectral::power_grid(spectral::fft2(img));
  const auto mask = spectral::axis_mask(n, n, 0.06);
  const auto sel = spectral::top_percentile_peaks(power, 0.002, mask);
  std::printf("peaks above %.3g:\n", sel.threshold);
  for (const auto& b : sel.peaks) std::printf("  (%d, %d) power %.1f\n", b.row, b.col, power(b.row, b.col));

  const auto rep = spectral::suppress_image(img, {0.06, 0.0, 0.002});
  const auto after = spectral::power_grid(spectral::fft2(rep.image));
  for (const auto& b : sel.peaks) std::printf("  (%d, %d) after suppression %.1f\n", b.row, b.col, after(b.row, b.col));

  if (argc > 1) {
    save_raster(spectral::heatmap(spectral::log_power(power)), std::string(argv[1]) + "_before.pgm");
    save_raster(spectral::heatmap(spectral::log_power(after)), std::string(argv[1]) + "_after.pgm");
  }
}
