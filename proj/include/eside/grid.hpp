#pragma once

#include <cstddef>
#include <vector>

#include "eside/error.hpp"

namespace eside {

// Dense row-major 2-D array.
template <typename T>
struct Grid {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int w, int h, T fill = T{}) : width(w), height(h) {
    if (w < 0 || h < 0) throw InvalidArgument("grid: negative dimension");
    data.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill);
  }

  std::size_t size() const { return data.size(); }

  T& operator()(int row, int col) { return data[static_cast<std::size_t>(row) * width + col]; }
  const T& operator()(int row, int col) const { return data[static_cast<std::size_t>(row) * width + col]; }

  bool contains(int row, int col) const { return row >= 0 && col >= 0 && row < height && col < width; }

  friend bool operator==(const Grid&, const Grid&) = default;
};

}  // namespace eside
