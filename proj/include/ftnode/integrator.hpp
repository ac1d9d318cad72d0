#pragma once

// Fixed-step explicit Euler flow  x_n = x_{n-1} + dt f(t_{n-1}, x_{n-1})
// and the discrete tangent map    Y_n = (Id + dt D_x f(t_{n-1}, x_{n-1})) Y_{n-1}.
//
// Step times are always computed from the global step index (t_n = n * dt), so
// flows over adjacent grid-aligned intervals compose bit-for-bit.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ftnode/error.hpp"
#include "ftnode/linalg.hpp"
#include "ftnode/vecfield.hpp"

namespace ftnode {

struct FlowConfig {
  double dt = 0.1;
  double t_end = 10.0;

  std::size_t steps() const {
    validate();
    return static_cast<std::size_t>(std::llround(t_end / dt));
  }

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidInput("flow step size must be positive");
    if (!(t_end > 0.0) || !std::isfinite(t_end)) throw InvalidInput("final time must be positive");
    const double ratio = t_end / dt;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio))
      throw AlignmentError("final time is not an integer multiple of the step size");
    if (std::llround(ratio) < 1) throw InvalidInput("flow needs at least one step");
  }

  double time(std::size_t n) const noexcept { return static_cast<double>(n) * dt; }
};

struct Interval {
  double t0 = 0.0;
  double t1 = 0.0;

  double length() const noexcept { return t1 - t0; }
};

/// Grid indices [first, last] of a step-aligned interval.
struct StepRange {
  std::size_t first = 0;
  std::size_t last = 0;

  std::size_t count() const noexcept { return last - first; }
};

inline std::size_t grid_index(double t, double dt) {
  const double r = t / dt;
  const double n = std::round(r);
  if (std::abs(r - n) > 1e-9 * std::max(1.0, std::abs(r)))
    throw AlignmentError("time " + std::to_string(t) + " is not on the step grid (dt = " + std::to_string(dt) + ")");
  if (n < 0) throw AlignmentError("negative time " + std::to_string(t));
  return static_cast<std::size_t>(n);
}

inline StepRange align(const FlowConfig& cfg, Interval iv) {
  const std::size_t total = cfg.steps();
  const StepRange r{grid_index(iv.t0, cfg.dt), grid_index(iv.t1, cfg.dt)};
  if (r.first > r.last) throw InvalidInput("interval end precedes its start");
  if (r.last > total) throw OutOfDomain("interval extends past the final time");
  return r;
}

struct Trajectory {
  std::size_t dim = 0;
  std::vector<double> times;
  std::vector<double> flat_states;  // (N+1) x dim, row-major

  std::size_t size() const noexcept { return times.size(); }
  std::span<const double> state(std::size_t n) const {
    return std::span<const double>(flat_states).subspan(n * dim, dim);
  }
  Vec state_vec(std::size_t n) const {
    auto s = state(n);
    return Vec(s.begin(), s.end());
  }
  std::span<const double> final_state() const { return state(size() - 1); }
};

struct TangentFlowResult {
  Trajectory trajectory;
  std::vector<double> flat_jacobians;  // (N+1) x dim x dim when recorded, else empty
  Mat final_jacobian;

  bool recorded() const noexcept { return !flat_jacobians.empty(); }
  Mat jacobian(std::size_t n) const {
    const std::size_t d = trajectory.dim;
    if (!recorded()) throw InvalidInput("intermediate jacobians were not recorded");
    return Mat(d, d, std::vector<double>(flat_jacobians.begin() + n * d * d, flat_jacobians.begin() + (n + 1) * d * d));
  }
};

namespace detail {

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

// y <- (Id + dt J) y for row-major d x d matrices; `tmp` has d*d entries.
inline void tangent_update(std::span<double> y, std::span<const double> jac, double dt, std::size_t d,
                           std::span<double> tmp) {
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0.0;
      for (std::size_t m = 0; m < d; ++m) acc += jac[r * d + m] * y[m * d + c];
      tmp[r * d + c] = y[r * d + c] + dt * acc;
    }
  std::copy(tmp.begin(), tmp.end(), y.begin());
}

}  // namespace detail

/// One Euler step from x at step index n-1; writes x_n into `next`.
template <VectorField F>
void euler_step(const F& field, std::size_t n_prev, double dt, std::span<const double> x, std::span<double> next,
                std::span<double> vel) {
  field.eval(static_cast<double>(n_prev) * dt, x, vel);
  for (std::size_t i = 0; i < x.size(); ++i) next[i] = x[i] + dt * vel[i];
}

template <VectorField F>
Trajectory flow(const F& field, std::span<const double> x0, Interval interval, const FlowConfig& cfg) {
  const std::size_t d = field.dim();
  if (x0.size() != d) throw InvalidInput("initial state dimension mismatch");
  if (!detail::all_finite(x0)) throw InvalidInput("initial state is not finite");
  const StepRange r = align(cfg, interval);
  Trajectory tr;
  tr.dim = d;
  tr.times.resize(r.count() + 1);
  tr.flat_states.resize((r.count() + 1) * d);
  std::copy(x0.begin(), x0.end(), tr.flat_states.begin());
  tr.times[0] = cfg.time(r.first);
  Vec vel(d);
  for (std::size_t j = 1; j <= r.count(); ++j) {
    const std::size_t n = r.first + j;
    std::span<const double> x(tr.flat_states.data() + (j - 1) * d, d);
    std::span<double> next(tr.flat_states.data() + j * d, d);
    euler_step(field, n - 1, cfg.dt, x, next, vel);
    if (!detail::all_finite(next)) throw Divergence(n, "non-finite state");
    tr.times[j] = cfg.time(n);
  }
  return tr;
}

/// Endpoint only; same arithmetic as flow().
template <VectorField F>
Vec flow_endpoint(const F& field, std::span<const double> x0, Interval interval, const FlowConfig& cfg) {
  const std::size_t d = field.dim();
  if (x0.size() != d) throw InvalidInput("initial state dimension mismatch");
  const StepRange r = align(cfg, interval);
  Vec x(x0.begin(), x0.end()), next(d), vel(d);
  for (std::size_t n = r.first + 1; n <= r.last; ++n) {
    euler_step(field, n - 1, cfg.dt, x, next, vel);
    if (!detail::all_finite(next)) throw Divergence(n, "non-finite state");
    x.swap(next);
  }
  return x;
}

template <VectorField F>
TangentFlowResult tangent_flow(const F& field, std::span<const double> x0, Interval interval, const FlowConfig& cfg,
                               bool record_intermediate = false) {
  const std::size_t d = field.dim();
  if (x0.size() != d) throw InvalidInput("initial state dimension mismatch");
  if (!detail::all_finite(x0)) throw InvalidInput("initial state is not finite");
  const StepRange r = align(cfg, interval);
  TangentFlowResult out;
  Trajectory& tr = out.trajectory;
  tr.dim = d;
  tr.times.resize(r.count() + 1);
  tr.flat_states.resize((r.count() + 1) * d);
  std::copy(x0.begin(), x0.end(), tr.flat_states.begin());
  tr.times[0] = cfg.time(r.first);

  std::vector<double> y(d * d, 0.0), jac(d * d), tmp(d * d);
  for (std::size_t i = 0; i < d; ++i) y[i * d + i] = 1.0;
  if (record_intermediate) {
    out.flat_jacobians.resize((r.count() + 1) * d * d);
    std::copy(y.begin(), y.end(), out.flat_jacobians.begin());
  }
  Vec vel(d);
  for (std::size_t j = 1; j <= r.count(); ++j) {
    const std::size_t n = r.first + j;
    std::span<const double> x(tr.flat_states.data() + (j - 1) * d, d);
    std::span<double> next(tr.flat_states.data() + j * d, d);
    field.jacobian(cfg.time(n - 1), x, jac);
    euler_step(field, n - 1, cfg.dt, x, next, vel);
    detail::tangent_update(y, jac, cfg.dt, d, tmp);
    if (!detail::all_finite(next) || !detail::all_finite(y)) throw Divergence(n, "non-finite state or tangent");
    tr.times[j] = cfg.time(n);
    if (record_intermediate) std::copy(y.begin(), y.end(), out.flat_jacobians.begin() + j * d * d);
  }
  out.final_jacobian = Mat(d, d, std::move(y));
  return out;
}

/// Checks that a unit-step Euler flow over K unit blocks reproduces the residual
/// recursion x_k = x_{k-1} + f(theta_k, x_{k-1}) bit-for-bit. `perturbation` is
/// added to each residual update (mutation hook for testing the comparison).
template <VectorField F>
bool resnet_step_equivalence(const F& field, std::span<const double> x0, std::size_t K, double perturbation = 0.0) {
  const FlowConfig cfg{1.0, static_cast<double>(K)};
  const Vec euler = flow_endpoint(field, x0, Interval{0.0, static_cast<double>(K)}, cfg);
  const std::size_t d = field.dim();
  Vec x(x0.begin(), x0.end()), f(d);
  for (std::size_t k = 1; k <= K; ++k) {
    field.eval(static_cast<double>(k - 1), x, f);
    for (std::size_t i = 0; i < d; ++i) x[i] = x[i] + f[i] + perturbation;
  }
  for (std::size_t i = 0; i < d; ++i)
    if (std::bit_cast<std::uint64_t>(x[i]) != std::bit_cast<std::uint64_t>(euler[i])) return false;
  return true;
}

}  // namespace ftnode
