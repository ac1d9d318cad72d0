#pragma once

// Diagnostics on a trained classifier: prediction rasters and decision
// margins, FTLE ridge extraction, ridge/margin overlap, Monte Carlo coherence
// of flowed regions, and an L2-ball adversarial probe.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ftnode/error.hpp"
#include "ftnode/grid.hpp"
#include "ftnode/integrator.hpp"
#include "ftnode/model.hpp"
#include "ftnode/parallel.hpp"
#include "ftnode/rng.hpp"
#include "ftnode/training.hpp"

namespace ftnode {

using NodeMask = std::vector<unsigned char>;

// ---------------------------------------------------------------------------
// Prediction rasters
// ---------------------------------------------------------------------------

/// pred of the flow started at time t (t = 0 gives predict()).
template <VectorField F>
double predict_from(const NodeClassifier<F>& m, std::span<const double> x, double t) {
  const Vec xT = flow_endpoint(m.field, x, Interval{t, m.flow.t_end}, m.flow);
  const auto out = m.output.apply(xT);
  return pred_from_output(out);
}

template <VectorField F>
ScalarGrid pred_grid(const NodeClassifier<F>& m, const GridSpec& grid, std::size_t threads = 1, double t = 0.0) {
  grid.validate();
  ScalarGrid out(grid, kNaN);
  parallel_for(grid.size(), threads, [&](std::size_t p) {
    const double x[2] = {grid.x(p % grid.resolution), grid.y(p / grid.resolution)};
    try {
      out.values[p] = predict_from(m, x, t);
    } catch (const Divergence&) {
    }
  });
  return out;
}

struct Margin {
  NodeMask mask;
  std::size_t count = 0;
  double area = 0.0;
};

/// D_eps = { |pred - 0.5| < eps } on the raster; NaN nodes are never included.
inline Margin decision_margin(const ScalarGrid& pred, double epsilon) {
  if (!(epsilon >= 0.0)) throw InvalidInput("margin epsilon must be nonnegative");
  Margin m;
  m.mask.assign(pred.values.size(), 0);
  for (std::size_t p = 0; p < pred.values.size(); ++p) {
    const double v = pred.values[p];
    if (std::isfinite(v) && std::abs(v - 0.5) < epsilon) {
      m.mask[p] = 1;
      ++m.count;
    }
  }
  m.area = static_cast<double>(m.count) * pred.grid.cell_area();
  return m;
}

/// Nodes whose prediction (flow started at t) falls in class c.
inline NodeMask class_mask(const ScalarGrid& pred, ClassId c) {
  NodeMask mask(pred.values.size(), 0);
  for (std::size_t p = 0; p < mask.size(); ++p) {
    const double v = pred.values[p];
    if (!std::isfinite(v) || v == 0.5) continue;
    mask[p] = predicted_class(v) == c;
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Ridges
// ---------------------------------------------------------------------------

struct RidgeNode {
  std::size_t i = 0, j = 0;
  double value = 0.0;
  double grad_x = 0.0, grad_y = 0.0;  // central differences in node units
};

struct RidgeSet {
  GridSpec grid;
  std::vector<RidgeNode> nodes;

  std::size_t size() const noexcept { return nodes.size(); }
  bool empty() const noexcept { return nodes.empty(); }
};

namespace detail {

inline constexpr std::array<std::array<int, 2>, 4> kStencils{{{1, 0}, {1, 1}, {0, 1}, {1, -1}}};

// Stencil whose direction is nearest to the gradient, modulo 180 degrees.
inline std::size_t stencil_for(double gx, double gy) {
  constexpr double tan_22_5 = 0.41421356237309503;
  const double ax = std::abs(gx), ay = std::abs(gy);
  if (ay <= tan_22_5 * ax) return 0;
  if (ax <= tan_22_5 * ay) return 2;
  return (gx > 0) == (gy > 0) ? 1 : 3;
}

}  // namespace detail

/// Non-maximum suppression: a node is a ridge node when its value is at least
/// min_value and strictly exceeds both neighbours along the stencil closest to
/// its central-difference gradient. With an exactly zero gradient, a strict
/// maximum along any of the four stencils qualifies (isolated peaks included).
/// Border nodes and nodes with NaN neighbours are skipped.
inline RidgeSet extract_ridges(const ScalarGrid& f, double min_value) {
  RidgeSet out;
  out.grid = f.grid;
  const std::size_t n = f.grid.resolution;
  auto at = [&](std::size_t i, std::size_t j) { return f.values[j * n + i]; };
  for (std::size_t j = 1; j + 1 < n; ++j)
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const double v = at(i, j);
      if (!std::isfinite(v) || v < min_value) continue;
      bool finite = true;
      for (int dj = -1; dj <= 1; ++dj)
        for (int di = -1; di <= 1; ++di) finite = finite && std::isfinite(at(i + di, j + dj));
      if (!finite) continue;
      const double gx = 0.5 * (at(i + 1, j) - at(i - 1, j));
      const double gy = 0.5 * (at(i, j + 1) - at(i, j - 1));
      auto strict_max = [&](std::size_t s) {
        const auto [di, dj] = detail::kStencils[s];
        return v > at(i + di, j + dj) && v > at(i - di, j - dj);
      };
      bool flagged = false;
      if (gx == 0.0 && gy == 0.0) {
        for (std::size_t s = 0; s < 4 && !flagged; ++s) flagged = strict_max(s);
      } else {
        flagged = strict_max(detail::stencil_for(gx, gy));
      }
      if (flagged) out.nodes.push_back({i, j, v, gx, gy});
    }
  return out;
}

/// Value at the given quantile (0..1) of the finite entries; NaN if none.
inline double finite_quantile(std::span<const double> values, double q) {
  std::vector<double> v;
  for (double x : values)
    if (std::isfinite(x)) v.push_back(x);
  if (v.empty()) return kNaN;
  const auto k = static_cast<std::size_t>(std::floor(q * static_cast<double>(v.size() - 1)));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

inline constexpr double kDefaultRidgeQuantile = 0.9;

/// Fraction of ridge nodes within `tolerance_cells` (Chebyshev) of a margin
/// node; nullopt when there are no ridge nodes.
inline std::optional<double> ridge_boundary_overlap(const RidgeSet& ridges, const NodeMask& margin,
                                                    std::size_t tolerance_cells) {
  const std::size_t n = ridges.grid.resolution;
  if (margin.size() != ridges.grid.size()) throw InvalidInput("margin mask and ridge raster differ");
  if (ridges.empty()) return std::nullopt;
  std::size_t hit = 0;
  for (const auto& r : ridges.nodes) {
    const std::size_t i0 = r.i >= tolerance_cells ? r.i - tolerance_cells : 0;
    const std::size_t j0 = r.j >= tolerance_cells ? r.j - tolerance_cells : 0;
    const std::size_t i1 = std::min(n - 1, r.i + tolerance_cells);
    const std::size_t j1 = std::min(n - 1, r.j + tolerance_cells);
    bool found = false;
    for (std::size_t j = j0; j <= j1 && !found; ++j)
      for (std::size_t i = i0; i <= i1 && !found; ++i) found = margin[j * n + i] != 0;
    hit += found;
  }
  return static_cast<double>(hit) / static_cast<double>(ridges.size());
}

// ---------------------------------------------------------------------------
// Coherence
// ---------------------------------------------------------------------------

struct CoherenceReport {
  double ratio = 0.0;        // landed / finite samples
  double epsilon_out = 0.0;  // 1 - ratio
  std::size_t sample_count = 0;
  std::size_t landed = 0;
  std::size_t diverged = 0;
};

/// Samples uniformly from the cells of region_t0, flows each sample from
/// interval.t0 to interval.t1 and counts landings whose nearest node lies in
/// region_t1. Sample i draws from Rng::substream(seed, i).
template <VectorField F>
CoherenceReport coherence_ratio(const F& field, const FlowConfig& cfg, const GridSpec& grid,
                                const NodeMask& region_t0, const NodeMask& region_t1, Interval interval,
                                std::size_t samples, std::uint64_t seed, std::size_t threads = 1) {
  if (region_t0.size() != grid.size() || region_t1.size() != grid.size())
    throw InvalidInput("region masks do not match the raster");
  std::vector<std::size_t> nodes;
  for (std::size_t p = 0; p < region_t0.size(); ++p)
    if (region_t0[p]) nodes.push_back(p);
  if (nodes.empty()) throw InvalidInput("source region is empty");
  if (samples == 0) throw InvalidInput("sample count must be positive");
  align(cfg, interval);

  enum : unsigned char { kMiss = 0, kHit = 1, kDiverged = 2 };
  std::vector<unsigned char> outcome(samples, kMiss);
  parallel_for(samples, threads, [&](std::size_t s) {
    Rng rng = Rng::substream(seed, s);
    const std::size_t p = nodes[rng.below(nodes.size())];
    const double x[2] = {grid.x(p % grid.resolution) + grid.hx() * (rng.uniform() - 0.5),
                         grid.y(p / grid.resolution) + grid.hy() * (rng.uniform() - 0.5)};
    try {
      const Vec y = flow_endpoint(field, x, interval, cfg);
      const std::size_t q = grid.nearest(y[0], y[1]);
      outcome[s] = (q != GridSpec::npos && region_t1[q]) ? kHit : kMiss;
    } catch (const Divergence&) {
      outcome[s] = kDiverged;
    }
  });
  CoherenceReport r;
  r.sample_count = samples;
  for (unsigned char o : outcome) {
    r.landed += o == kHit;
    r.diverged += o == kDiverged;
  }
  if (r.diverged == samples) throw Divergence(0, "every coherence sample diverged");
  r.ratio = static_cast<double>(r.landed) / static_cast<double>(samples - r.diverged);
  r.epsilon_out = 1.0 - r.ratio;
  return r;
}

// ---------------------------------------------------------------------------
// Adversarial probe
// ---------------------------------------------------------------------------

struct AdversarialResult {
  bool success = false;
  std::optional<std::array<double, 2>> witness;
};

/// pred(x0) and its input gradient via the tangent map: grad = (A Y)^T dpred/dout.
template <VectorField F>
double pred_and_input_gradient(const NodeClassifier<F>& m, std::span<const double> x0, std::array<double, 2>& grad) {
  const TangentFlowResult tf = tangent_flow(m.field, x0, Interval{0.0, m.flow.t_end}, m.flow, false);
  const auto out = m.output.apply(tf.trajectory.final_state());
  const auto yb = label_of(ClassId::blue);
  const auto yo = label_of(ClassId::orange);
  const double db = std::hypot(out[0] - yb[0], out[1] - yb[1]);
  const double dor = std::hypot(out[0] - yo[0], out[1] - yo[1]);
  const double s = db + dor;
  grad = {0.0, 0.0};
  if (s == 0.0) return 0.5;
  const double pred = dor / s;
  // d pred / d out = ((1 - pred) grad(d_o) - pred grad(d_b)) / s
  std::array<double, 2> gout{};
  for (std::size_t a = 0; a < 2; ++a) {
    const double go = dor > 0.0 ? (out[a] - yo[a]) / dor : 0.0;
    const double gb = db > 0.0 ? (out[a] - yb[a]) / db : 0.0;
    gout[a] = ((1.0 - pred) * go - pred * gb) / s;
  }
  const Mat AY = matmul(m.output.weight, tf.final_jacobian);
  for (std::size_t c = 0; c < 2; ++c) grad[c] = AY(0, c) * gout[0] + AY(1, c) * gout[1];
  return pred;
}

inline constexpr std::size_t kSweepDirections = 16;

/// Searches the closed Euclidean eps-ball around x0 for a point whose predicted
/// class differs from that of x0: normalized projected gradient steps of size
/// 2.5 eps / steps away from the original class, then a sweep over 16 points on
/// the sphere of radius eps.
template <VectorField F>
AdversarialResult adversarial_probe(const NodeClassifier<F>& m, std::span<const double> x0, double epsilon,
                                    std::size_t steps = 20) {
  if (!(epsilon >= 0.0)) throw InvalidInput("adversarial budget must be nonnegative");
  const double p0 = predict(m, x0);
  if (p0 == 0.5) throw InvalidInput("probe point sits exactly on the decision boundary");
  AdversarialResult res;
  if (epsilon == 0.0) return res;
  const ClassId c0 = predicted_class(p0);
  const double sign = c0 == ClassId::blue ? -1.0 : 1.0;  // direction that moves pred across 0.5
  auto flips = [&](const std::array<double, 2>& x) {
    try {
      const double p = predict(m, x);
      return p != 0.5 && predicted_class(p) != c0;
    } catch (const Divergence&) {
      return false;
    }
  };

  std::array<double, 2> x{x0[0], x0[1]};
  const double alpha = steps ? 2.5 * epsilon / static_cast<double>(steps) : 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    std::array<double, 2> g{};
    try {
      pred_and_input_gradient(m, x, g);
    } catch (const Divergence&) {
      break;
    }
    const double gn = std::hypot(g[0], g[1]);
    if (!(gn > 0.0) || !std::isfinite(gn)) break;
    x[0] += sign * alpha * g[0] / gn;
    x[1] += sign * alpha * g[1] / gn;
    const double dx = x[0] - x0[0], dy = x[1] - x0[1];
    const double r = std::hypot(dx, dy);
    if (r > epsilon) {
      x[0] = x0[0] + dx * (epsilon / r);
      x[1] = x0[1] + dy * (epsilon / r);
    }
    if (flips(x)) {
      res.success = true;
      res.witness = x;
      return res;
    }
  }
  for (std::size_t k = 0; k < kSweepDirections; ++k) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(kSweepDirections);
    const std::array<double, 2> y{x0[0] + epsilon * std::cos(a), x0[1] + epsilon * std::sin(a)};
    if (flips(y)) {
      res.success = true;
      res.witness = y;
      return res;
    }
  }
  return res;
}

/// Fraction of probe points (skipping any exactly on the boundary) whose class the probe flips.
template <VectorField F>
double adversarial_success_rate(const NodeClassifier<F>& m, std::span<const std::array<double, 2>> points,
                                double epsilon, std::size_t steps = 20, std::size_t threads = 1) {
  std::vector<signed char> hit(points.size(), -1);
  parallel_for(points.size(), threads, [&](std::size_t i) {
    try {
      hit[i] = adversarial_probe(m, points[i], epsilon, steps).success ? 1 : 0;
    } catch (const InvalidInput&) {
    } catch (const Divergence&) {
    }
  });
  std::size_t n = 0, s = 0;
  for (signed char h : hit)
    if (h >= 0) {
      ++n;
      s += static_cast<std::size_t>(h);
    }
  return n ? static_cast<double>(s) / static_cast<double>(n) : kNaN;
}

}  // namespace ftnode
