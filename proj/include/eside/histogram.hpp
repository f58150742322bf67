#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <span>
#include <vector>

#include "eside/error.hpp"

namespace eside {

// Equal-width histogram. Bin i covers [edges[i], edges[i+1]); the last
// bin is closed on the right so the maximum lands in it.
struct Histogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;

  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }

  double center(std::size_t bin) const { return 0.5 * (edges[bin] + edges[bin + 1]); }

  std::size_t occupied_bins() const {
    return static_cast<std::size_t>(std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }));
  }

  // First bin with the largest count.
  std::size_t mode_bin() const {
    return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  }

  void write_csv(std::ostream& out) const {
    out << "bin,lo,hi,count\n";
    for (std::size_t i = 0; i < counts.size(); ++i) {
      out << i << ',' << edges[i] << ',' << edges[i + 1] << ',' << counts[i] << '\n';
    }
  }
};

// Range is [min, max] of the values; a degenerate range is widened to
// [v, v + 1] so every value falls in bin 0.
inline Histogram make_histogram(std::span<const double> values, int nbins) {
  if (nbins < 1) throw InvalidArgument("histogram: nbins must be >= 1");
  Histogram h;
  h.counts.assign(static_cast<std::size_t>(nbins), 0);
  h.edges.resize(static_cast<std::size_t>(nbins) + 1);
  if (values.empty()) {
    for (int i = 0; i <= nbins; ++i) h.edges[static_cast<std::size_t>(i)] = i;
    return h;
  }
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn;
  const double hi = *mx > *mn ? *mx : *mn + 1.0;
  const double width = (hi - lo) / nbins;
  for (int i = 0; i <= nbins; ++i) h.edges[static_cast<std::size_t>(i)] = lo + width * i;
  h.edges.back() = hi;
  for (double v : values) {
    auto bin = static_cast<long>(std::floor((v - lo) / (hi - lo) * nbins));
    bin = std::clamp(bin, 0L, static_cast<long>(nbins) - 1);
    ++h.counts[static_cast<std::size_t>(bin)];
  }
  return h;
}

}  // namespace eside
