#pragma once

// Raster and trajectory file formats.
//   field CSV : "# mode=<m> interval=<t0>:<t1> exponent=<j> bounds=<x0:x1:y0:y1> res=<n>" then "x,y,lambda"
//   PGM (P5)  : 8-bit, top row = largest y, linear min-max over finite values, NaN -> 0;
//               sidecar "<file>.meta" holds "vmin=<..> vmax=<..>"
//   PPM (P6)  : same normalization through viridis_table()
//   mask PGM  : 255 inside, 0 outside

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "ftnode/analysis.hpp"
#include "ftnode/error.hpp"
#include "ftnode/ftle.hpp"
#include "ftnode/grid.hpp"
#include "ftnode/integrator.hpp"

namespace ftnode {

namespace detail {

inline std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
  if (!os) throw InvalidInput("cannot open '" + path + "' for writing");
  return os;
}

inline std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

inline void write_field_csv(const ScalarGrid& g, const std::string& header, std::ostream& os) {
  if (!header.empty()) os << "# " << header << '\n';
  os << "x,y,lambda\n";
  os.precision(17);
  const std::size_t n = g.grid.resolution;
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i) os << g.grid.x(i) << ',' << g.grid.y(j) << ',' << g.at(i, j) << '\n';
}

inline std::string frame_header(const FtleField& f, const FtleFrame& frame) {
  return "mode=" + to_string(f.mode) + " interval=" + detail::num(frame.interval.t0) + ":" +
         detail::num(frame.interval.t1) + " exponent=" + std::to_string(f.which_exponent) +
         " bounds=" + f.grid.bounds_string() + " res=" + std::to_string(f.grid.resolution);
}

inline void write_frame_csv(const FtleField& f, std::size_t frame, const std::string& path) {
  auto os = detail::open_out(path);
  write_field_csv(f.frames.at(frame).field, frame_header(f, f.frames[frame]), os);
}

struct ReadField {
  std::string header;
  ScalarGrid grid;
};

/// Reads a field CSV written by write_field_csv; the raster is inferred from the rows.
inline ReadField read_field_csv(std::istream& is) {
  ReadField out;
  std::string line;
  std::vector<std::array<double, 3>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      out.header = line.substr(line.find_first_not_of("# "));
      continue;
    }
    if (line.rfind("x,y", 0) == 0) continue;
    std::stringstream ss(line);
    std::array<double, 3> r{};
    std::string cell;
    for (double& v : r) {
      if (!std::getline(ss, cell, ',')) throw InvalidInput("malformed field row");
      v = (cell == "nan" || cell == "-nan") ? kNaN : std::stod(cell);
    }
    rows.push_back(r);
  }
  const auto n = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(rows.size()))));
  if (n < 2 || n * n != rows.size()) throw InvalidInput("field file is not a square raster");
  GridSpec g{rows.front()[0], rows.back()[0], rows.front()[1], rows.back()[1], n};
  out.grid = ScalarGrid(g);
  for (std::size_t p = 0; p < rows.size(); ++p) out.grid.values[p] = rows[p][2];
  return out;
}

struct Range {
  double vmin = 0.0, vmax = 0.0;
};

inline Range finite_range(const ScalarGrid& g) {
  Range r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (double v : g.values)
    if (std::isfinite(v)) {
      r.vmin = std::min(r.vmin, v);
      r.vmax = std::max(r.vmax, v);
    }
  if (r.vmin > r.vmax) r = {0.0, 0.0};
  return r;
}

inline std::uint8_t quantize(double v, Range r) {
  if (!std::isfinite(v)) return 0;
  if (!(r.vmax > r.vmin)) return 0;
  const double s = std::clamp((v - r.vmin) / (r.vmax - r.vmin), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(255.0 * s));
}

/// 8-bit grayscale; returns the normalization range and writes it to path + ".meta".
inline Range write_pgm(const ScalarGrid& g, const std::string& path) {
  const Range r = finite_range(g);
  const std::size_t n = g.grid.resolution;
  auto os = detail::open_out(path, true);
  os << "P5\n" << n << ' ' << n << "\n255\n";
  std::vector<char> row(n);
  for (std::size_t jj = 0; jj < n; ++jj) {
    const std::size_t j = n - 1 - jj;
    for (std::size_t i = 0; i < n; ++i) row[i] = static_cast<char>(quantize(g.at(i, j), r));
    os.write(row.data(), static_cast<std::streamsize>(n));
  }
  auto meta = detail::open_out(path + ".meta");
  meta << "vmin=" << detail::num(r.vmin) << " vmax=" << detail::num(r.vmax) << '\n';
  return r;
}

inline void write_mask_pgm(const GridSpec& grid, const NodeMask& mask, const std::string& path) {
  const std::size_t n = grid.resolution;
  auto os = detail::open_out(path, true);
  os << "P5\n" << n << ' ' << n << "\n255\n";
  for (std::size_t jj = 0; jj < n; ++jj) {
    const std::size_t j = n - 1 - jj;
    for (std::size_t i = 0; i < n; ++i) os.put(mask[grid.index(i, j)] ? static_cast<char>(255) : 0);
  }
}

// Linear interpolation between nine anchor colors of the viridis map.
inline const std::array<std::array<std::uint8_t, 3>, 256>& viridis_table() {
  static const auto table = [] {
    constexpr std::array<std::array<double, 3>, 9> anchors{{{68, 1, 84},
                                                            {71, 44, 122},
                                                            {59, 81, 139},
                                                            {44, 113, 142},
                                                            {33, 144, 141},
                                                            {39, 173, 129},
                                                            {92, 200, 99},
                                                            {170, 220, 50},
                                                            {253, 231, 37}}};
    std::array<std::array<std::uint8_t, 3>, 256> t{};
    for (std::size_t k = 0; k < 256; ++k) {
      const double pos = static_cast<double>(k) / 255.0 * 8.0;
      const auto a = std::min<std::size_t>(static_cast<std::size_t>(pos), 7);
      const double w = pos - static_cast<double>(a);
      for (std::size_t c = 0; c < 3; ++c)
        t[k][c] = static_cast<std::uint8_t>(std::lround((1.0 - w) * anchors[a][c] + w * anchors[a + 1][c]));
    }
    return t;
  }();
  return table;
}

inline Range write_ppm(const ScalarGrid& g, const std::string& path) {
  const Range r = finite_range(g);
  const std::size_t n = g.grid.resolution;
  const auto& lut = viridis_table();
  auto os = detail::open_out(path, true);
  os << "P6\n" << n << ' ' << n << "\n255\n";
  for (std::size_t jj = 0; jj < n; ++jj) {
    const std::size_t j = n - 1 - jj;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = g.at(i, j);
      const auto& c = std::isfinite(v) ? lut[quantize(v, r)] : std::array<std::uint8_t, 3>{0, 0, 0};
      os.write(reinterpret_cast<const char*>(c.data()), 3);
    }
  }
  return r;
}

inline void write_trajectory_csv(const Trajectory& tr, std::ostream& os) {
  os << "t";
  for (std::size_t c = 0; c < tr.dim; ++c) os << ",x" << c + 1;
  os << '\n';
  os.precision(17);
  for (std::size_t n = 0; n < tr.size(); ++n) {
    os << tr.times[n];
    for (double v : tr.state(n)) os << ',' << v;
    os << '\n';
  }
}

inline void write_ridges_csv(const RidgeSet& r, const std::string& path) {
  auto os = detail::open_out(path);
  os << "x,y,lambda\n";
  os.precision(17);
  for (const auto& nd : r.nodes) os << r.grid.x(nd.i) << ',' << r.grid.y(nd.j) << ',' << nd.value << '\n';
}

}  // namespace ftnode
