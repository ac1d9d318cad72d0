#pragma once

// Two-moons data with labels y_blue = (0, 1), y_orange = (0, -1).
//   blue   (upper moon): (cos phi, sin phi)
//   orange (lower moon): (1 - cos phi, 0.5 - sin phi)
// phi ~ U[0, pi], isotropic N(0, noise^2) jitter, then shifted by -(0.5, 0.25).
// Draw order per point: phi, jitter x, jitter y. All blue points come first.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ftnode/error.hpp"
#include "ftnode/rng.hpp"

namespace ftnode {

enum class ClassId : std::uint8_t { blue = 0, orange = 1 };

inline std::string to_string(ClassId c) { return c == ClassId::blue ? "blue" : "orange"; }

inline ClassId parse_class(const std::string& s) {
  if (s == "blue") return ClassId::blue;
  if (s == "orange") return ClassId::orange;
  throw InvalidInput("unknown class '" + s + "'");
}

inline std::array<double, 2> label_of(ClassId c) {
  return c == ClassId::blue ? std::array<double, 2>{0.0, 1.0} : std::array<double, 2>{0.0, -1.0};
}

inline constexpr std::array<double, 2> kMoonsShift{0.5, 0.25};

struct Dataset {
  std::vector<std::array<double, 2>> inputs;
  std::vector<ClassId> classes;
  std::uint64_t seed = 0;
  bool odd_count_rounded = false;

  std::size_t size() const noexcept { return inputs.size(); }
  std::array<double, 2> label(std::size_t i) const { return label_of(classes[i]); }
  std::size_t count(ClassId c) const {
    std::size_t n = 0;
    for (auto k : classes) n += (k == c);
    return n;
  }
};

/// Noise-free moon point before the centering shift.
inline std::array<double, 2> moon_point(ClassId c, double phi) {
  if (c == ClassId::blue) return {std::cos(phi), std::sin(phi)};
  return {1.0 - std::cos(phi), 0.5 - std::sin(phi)};
}

inline Dataset make_moons(std::size_t n, double noise, std::uint64_t seed) {
  if (n < 2) throw InvalidInput("moons needs at least two points");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw InvalidInput("noise must be a nonnegative number");
  Dataset ds;
  ds.seed = seed;
  ds.odd_count_rounded = (n % 2) != 0;
  const std::size_t per_class = n / 2;
  ds.inputs.reserve(2 * per_class);
  ds.classes.reserve(2 * per_class);
  Rng rng(seed);
  for (ClassId c : {ClassId::blue, ClassId::orange}) {
    for (std::size_t i = 0; i < per_class; ++i) {
      const double phi = std::numbers::pi * rng.uniform();
      auto p = moon_point(c, phi);
      const double jx = rng.normal();
      const double jy = rng.normal();
      p[0] += noise * jx - kMoonsShift[0];
      p[1] += noise * jy - kMoonsShift[1];
      ds.inputs.push_back(p);
      ds.classes.push_back(c);
    }
  }
  return ds;
}

inline Dataset subset(const Dataset& ds, const std::vector<std::size_t>& idx) {
  Dataset out;
  out.seed = ds.seed;
  out.inputs.reserve(idx.size());
  out.classes.reserve(idx.size());
  for (std::size_t i : idx) {
    out.inputs.push_back(ds.inputs.at(i));
    out.classes.push_back(ds.classes.at(i));
  }
  return out;
}

/// Class-stratified split. Each class is shuffled (Fisher-Yates) and the first
/// round(fraction * n_class) members go to the test set; both parts keep the
/// original index order.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw InvalidInput("test fraction must lie in (0, 1)");
  Rng rng(seed);
  std::vector<unsigned char> is_test(ds.size(), 0);
  for (ClassId c : {ClassId::blue, ClassId::orange}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.classes[i] == c) members.push_back(i);
    for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[rng.below(i)]);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(members.size())));
    for (std::size_t i = 0; i < n_test; ++i) is_test[members[i]] = 1;
  }
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < ds.size(); ++i) (is_test[i] ? test_idx : train_idx).push_back(i);
  return {subset(ds, train_idx), subset(ds, test_idx)};
}

inline void write_dataset_csv(const Dataset& ds, std::ostream& os) {
  os << "x1,x2,class\n";
  os.precision(17);
  for (std::size_t i = 0; i < ds.size(); ++i)
    os << ds.inputs[i][0] << ',' << ds.inputs[i][1] << ',' << to_string(ds.classes[i]) << '\n';
}

inline void write_dataset_csv(const Dataset& ds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw InvalidInput("cannot open '" + path + "' for writing");
  write_dataset_csv(ds, os);
}

inline Dataset read_dataset_csv(std::istream& is) {
  Dataset ds;
  std::string line;
  if (!std::getline(is, line) || line.rfind("x1,x2,class", 0) != 0) throw InvalidInput("dataset header missing");
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b, c;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c))
      throw InvalidInput("malformed dataset row " + std::to_string(lineno));
    if (!c.empty() && c.back() == '\r') c.pop_back();
    try {
      ds.inputs.push_back({std::stod(a), std::stod(b)});
    } catch (const std::exception&) {
      throw InvalidInput("malformed number in dataset row " + std::to_string(lineno));
    }
    ds.classes.push_back(parse_class(c));
  }
  return ds;
}

inline Dataset read_dataset_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InvalidInput("cannot open dataset '" + path + "'");
  return read_dataset_csv(is);
}

}  // namespace ftnode
