#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "ftnode/error.hpp"

namespace ftnode {

/// Square raster of nodes over an axis-aligned box, endpoints included.
/// Node (i, j) sits at x = x_min + i*hx, y = y_min + j*hy; storage index j*res + i.
struct GridSpec {
  double x_min = -2.0;
  double x_max = 2.0;
  double y_min = -2.0;
  double y_max = 2.0;
  std::size_t resolution = 200;

  void validate() const {
    if (resolution < 2) throw InvalidInput("grid resolution must be at least 2");
    if (!(x_max > x_min) || !(y_max > y_min)) throw InvalidInput("grid bounds are empty");
  }

  std::size_t size() const noexcept { return resolution * resolution; }
  double hx() const noexcept { return (x_max - x_min) / static_cast<double>(resolution - 1); }
  double hy() const noexcept { return (y_max - y_min) / static_cast<double>(resolution - 1); }
  double cell_area() const noexcept { return hx() * hy(); }
  double x(std::size_t i) const noexcept { return x_min + static_cast<double>(i) * hx(); }
  double y(std::size_t j) const noexcept { return y_min + static_cast<double>(j) * hy(); }
  std::size_t index(std::size_t i, std::size_t j) const noexcept { return j * resolution + i; }

  /// Nearest node of a point, or npos when the point lies outside the raster's cells.
  std::size_t nearest(double px, double py) const noexcept {
    const double fi = std::round((px - x_min) / hx());
    const double fj = std::round((py - y_min) / hy());
    const double last = static_cast<double>(resolution - 1);
    if (!(fi >= 0.0 && fi <= last && fj >= 0.0 && fj <= last)) return npos;
    return index(static_cast<std::size_t>(fi), static_cast<std::size_t>(fj));
  }

  std::string bounds_string() const {
    auto f = [](double v) {
      std::string s = std::to_string(v);
      s.erase(s.find_last_not_of('0') + 1);
      if (!s.empty() && s.back() == '.') s.pop_back();
      return s;
    };
    return f(x_min) + ":" + f(x_max) + ":" + f(y_min) + ":" + f(y_max);
  }

  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

/// One scalar per grid node; NaN marks nodes where the flow diverged.
struct ScalarGrid {
  GridSpec grid;
  std::vector<double> values;

  ScalarGrid() = default;
  explicit ScalarGrid(GridSpec g, double fill = 0.0) : grid(g), values(g.size(), fill) {}

  double& at(std::size_t i, std::size_t j) { return values[grid.index(i, j)]; }
  double at(std::size_t i, std::size_t j) const { return values[grid.index(i, j)]; }
};

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace ftnode
