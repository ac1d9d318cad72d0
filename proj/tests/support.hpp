#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ftnode/integrator.hpp"
#include "ftnode/linalg.hpp"
#include "ftnode/model.hpp"
#include "ftnode/rng.hpp"
#include "ftnode/vecfield.hpp"

namespace testing_support {

using namespace ftnode;

inline Mat random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Mat m(r, c);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

/// Fills every trainable scalar (and, if asked, frozen ones) with N(0, scale^2).
inline void randomize(LayeredVectorField& f, Rng& rng, double scale, bool include_frozen = false) {
  const auto& mask = f.trainable_mask();
  auto p = f.params();
  for (std::size_t i = 0; i < p.size(); ++i)
    if (include_frozen || mask[i]) p[i] = scale * rng.normal();
}

inline double central_difference(const std::function<double(double)>& g, double x, double h) {
  return (g(x + h) - g(x - h)) / (2.0 * h);
}

/// |a - b| / max(|b|, floor)
inline double rel_err(double a, double b, double floor = 1e-7) {
  return std::abs(a - b) / std::max(std::abs(b), floor);
}

/// ln|det Y| of the Euler tangent map as the sum of per-step ln|det(Id + dt J)|,
/// which stays accurate when Y itself is badly conditioned.
template <class F>
double log_det_by_steps(const F& field, std::span<const double> x0, Interval iv, const FlowConfig& cfg) {
  const auto tr = flow(field, x0, iv, cfg);
  const std::size_t d = field.dim();
  double sum = 0.0;
  for (std::size_t n = 0; n + 1 < tr.size(); ++n) {
    std::vector<double> jac(d * d);
    field.jacobian(tr.times[n], tr.state(n), jac);
    Mat step = Mat::identity(d);
    for (std::size_t k = 0; k < d * d; ++k) step.data()[k] += cfg.dt * jac[k];
    sum += std::log(std::abs(determinant(step)));
  }
  return sum;
}

/// ex2-shaped classifier on a shortened horizon with uniform blocks.
inline Classifier short_ex2(double t_end, std::size_t blocks = 5) {
  Classifier m;
  m.flow = FlowConfig{0.1, t_end};
  m.field = LayeredVectorField(2, {{2, 2, 2}}, ParamSchedule::uniform(blocks, t_end));
  m.field.set_frozen_all_blocks(0, TensorKind::V, true);
  m.field.set_frozen_all_blocks(0, TensorKind::a, true);
  reset_frozen_tensors(m.field);
  m.output = identity_output();
  return m;
}

}  // namespace testing_support
