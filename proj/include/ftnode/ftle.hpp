#pragma once

// Finite-time Lyapunov exponents of the Euler flow map.
//   lambda_j([t0,t1], x0) = ln(Lambda_j) / (t1 - t0),  Lambda_j = singular values of Y
// and the equivalent Cauchy-Green route via the eigenvalues rho_j = Lambda_j^2 of Y^T Y.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ftnode/error.hpp"
#include "ftnode/grid.hpp"
#include "ftnode/integrator.hpp"
#include "ftnode/linalg.hpp"
#include "ftnode/parallel.hpp"
#include "ftnode/vecfield.hpp"

namespace ftnode {

struct FtleSpectrum {
  Interval interval;
  Vec exponents;        // descending
  Vec singular_values;  // descending

  double max() const { return exponents.front(); }
  double min() const { return exponents.back(); }
};

inline constexpr double kDegenerateSingularValue = 1e-300;

inline FtleSpectrum spectrum_from_svd(const SvdResult& s, Interval interval) {
  const double len = interval.length();
  if (!(len > 0.0)) throw InvalidInput("FTLE interval must have positive length");
  if (!(s.singular_values.back() > kDegenerateSingularValue))
    throw DegenerateTangent("tangent map is singular");
  FtleSpectrum out{interval, Vec(s.singular_values.size()), s.singular_values};
  for (std::size_t j = 0; j < out.exponents.size(); ++j) out.exponents[j] = std::log(s.singular_values[j]) / len;
  return out;
}

/// Largest exponent only; defined whenever the tangent map is nonzero, even if singular.
inline double leading_exponent(const SvdResult& s, Interval interval) {
  const double len = interval.length();
  if (!(len > 0.0)) throw InvalidInput("FTLE interval must have positive length");
  if (!(s.singular_values.front() > kDegenerateSingularValue)) throw DegenerateTangent("tangent map vanishes");
  return std::log(s.singular_values.front()) / len;
}

inline FtleSpectrum spectrum_from_tangent(const Mat& tangent, Interval interval) {
  if (!(interval.length() > 0.0)) throw InvalidInput("FTLE interval must have positive length");
  return spectrum_from_svd(svd(tangent), interval);
}

struct CauchyGreen {
  Interval interval;
  Mat tensor;
  Vec eigenvalues;  // rho_1 >= ... >= rho_d
  Mat eigenvectors;

  /// ln(rho_j) / (2 (t1 - t0)).
  Vec exponents() const {
    Vec out(eigenvalues.size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = std::log(eigenvalues[j]) / (2.0 * interval.length());
    return out;
  }
};

inline CauchyGreen cauchy_green(const Mat& tangent, Interval interval) {
  if (!(interval.length() > 0.0)) throw InvalidInput("FTLE interval must have positive length");
  Mat c = matmul(transpose(tangent), tangent);
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (std::size_t j = i + 1; j < c.cols(); ++j) c(j, i) = c(i, j);
  SymEigResult eig = sym_eig(c);
  if (!(eig.eigenvalues.back() > 0.0))
    throw DegenerateTangent("Cauchy-Green tensor is not positive definite");
  return CauchyGreen{interval, std::move(c), std::move(eig.eigenvalues), std::move(eig.eigenvectors)};
}

enum class FtleMode { full, growing, shrinking, subinterval };

inline std::string to_string(FtleMode m) {
  switch (m) {
    case FtleMode::full: return "full";
    case FtleMode::growing: return "growing";
    case FtleMode::shrinking: return "shrinking";
    case FtleMode::subinterval: return "subinterval";
  }
  return "?";
}

inline FtleMode parse_ftle_mode(const std::string& s) {
  if (s == "full") return FtleMode::full;
  if (s == "growing") return FtleMode::growing;
  if (s == "shrinking") return FtleMode::shrinking;
  if (s == "subinterval") return FtleMode::subinterval;
  throw InvalidInput("unknown FTLE mode '" + s + "'");
}

struct FtleFrame {
  Interval interval;
  ScalarGrid field;
};

struct FtleField {
  GridSpec grid;
  FtleMode mode = FtleMode::full;
  std::size_t which_exponent = 1;  // 1-based
  std::vector<FtleFrame> frames;
  std::size_t failed_points = 0;
};

struct FtleFieldOptions {
  std::size_t stride = 5;  // growing / shrinking frame spacing in steps
  std::size_t threads = 1;
};

/// Step indices at which frames are taken for a mode.
inline std::vector<std::size_t> frame_steps(FtleMode mode, std::size_t total_steps, std::size_t stride) {
  if (stride == 0) throw InvalidInput("frame stride must be positive");
  std::vector<std::size_t> out;
  if (mode == FtleMode::growing) {
    for (std::size_t n = stride; n < total_steps; n += stride) out.push_back(n);
    out.push_back(total_steps);
  } else if (mode == FtleMode::shrinking) {
    for (std::size_t n = 0; n < total_steps; n += stride) out.push_back(n);
  }
  return out;
}

/// FTLE field of the flow map over a raster of initial conditions.
///   full        lambda_j([0,T])                     one frame
///   growing     lambda_j([0,t_n]), sampled n        one trajectory, recorded tangents
///   shrinking   lambda_j([t_n,T]), sampled n        tangent restarted at t_n
///   subinterval lambda_j([alpha_k,beta_k]) per block, tangent restarted at alpha_k
/// Points whose flow diverges hold NaN in every frame and are counted.
template <VectorField F>
FtleField ftle_field(const F& field, const GridSpec& grid, FtleMode mode, std::size_t which_exponent,
                     const FlowConfig& cfg, FtleFieldOptions opts = {}) {
  grid.validate();
  if (which_exponent < 1 || which_exponent > field.dim())
    throw InvalidInput("exponent index " + std::to_string(which_exponent) + " outside 1.." +
                       std::to_string(field.dim()));
  if (field.dim() != 2) throw InvalidInput("FTLE fields are rastered over two-dimensional inputs");
  const std::size_t total = cfg.steps();
  const double t_end = cfg.time(total);

  std::vector<Interval> intervals;
  std::vector<std::size_t> steps;
  switch (mode) {
    case FtleMode::full:
      intervals.push_back({0.0, t_end});
      break;
    case FtleMode::growing:
      steps = frame_steps(mode, total, opts.stride);
      for (std::size_t n : steps) intervals.push_back({0.0, cfg.time(n)});
      break;
    case FtleMode::shrinking:
      steps = frame_steps(mode, total, opts.stride);
      for (std::size_t n : steps) intervals.push_back({cfg.time(n), t_end});
      break;
    case FtleMode::subinterval: {
      const auto& sched = field.schedule();
      for (std::size_t k = 0; k < sched.blocks(); ++k) {
        const Interval iv{sched.block_start(k), std::min(sched.block_end(k), t_end)};
        if (iv.t0 >= t_end) break;
        align(cfg, iv);
        intervals.push_back(iv);
      }
      break;
    }
  }

  FtleField out;
  out.grid = grid;
  out.mode = mode;
  out.which_exponent = which_exponent;
  for (const auto& iv : intervals) out.frames.push_back(FtleFrame{iv, ScalarGrid(grid, kNaN)});
  std::vector<unsigned char> failed(grid.size(), 0);
  const std::size_t j = which_exponent - 1;

  parallel_for(grid.size(), opts.threads, [&](std::size_t p) {
    const std::size_t i = p % grid.resolution;
    const std::size_t jj = p / grid.resolution;
    const double x0[2] = {grid.x(i), grid.y(jj)};
    try {
      // the top exponent stays defined when the tangent map is singular
      auto exponent = [&](const Mat& y, Interval iv) {
        return j == 0 ? leading_exponent(svd(y), iv) : spectrum_from_tangent(y, iv).exponents[j];
      };
      std::vector<double> vals(intervals.size());
      if (mode == FtleMode::full) {
        const auto tf = tangent_flow(field, x0, intervals[0], cfg, false);
        vals[0] = exponent(tf.final_jacobian, intervals[0]);
      } else if (mode == FtleMode::growing) {
        const auto tf = tangent_flow(field, x0, Interval{0.0, t_end}, cfg, true);
        for (std::size_t f = 0; f < steps.size(); ++f) vals[f] = exponent(tf.jacobian(steps[f]), intervals[f]);
      } else {
        const auto tr = flow(field, x0, Interval{0.0, t_end}, cfg);
        for (std::size_t f = 0; f < intervals.size(); ++f) {
          const std::size_t start = grid_index(intervals[f].t0, cfg.dt);
          const auto tf = tangent_flow(field, tr.state(start), intervals[f], cfg, false);
          vals[f] = exponent(tf.final_jacobian, intervals[f]);
        }
      }
      for (std::size_t f = 0; f < vals.size(); ++f) out.frames[f].field.values[p] = vals[f];
    } catch (const Divergence&) {
      failed[p] = 1;
    } catch (const DegenerateTangent&) {
      failed[p] = 1;
    }
  });
  for (unsigned char f : failed) out.failed_points += f;
  return out;
}

}  // namespace ftnode
