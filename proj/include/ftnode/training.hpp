#pragma once

// Loss, regularizer and their reverse-mode gradients for L o Phi(T, .).
//
//   mse   = (1/N) sum_i |L Phi(T, x_i) - y_i|^2
//   reg   = (1/N) sum_i max(lambda_max([0, T1], x_i), delta)
//
// The regularizer gradient is one reverse pass through the tangent recursion
// Y_n = (Id + dt J(x_{n-1})) Y_{n-1}, seeded with u1 v1^T / (T1 sigma_1).

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ftnode/data.hpp"
#include "ftnode/error.hpp"
#include "ftnode/ftle.hpp"
#include "ftnode/integrator.hpp"
#include "ftnode/linalg.hpp"
#include "ftnode/model.hpp"
#include "ftnode/parallel.hpp"
#include "ftnode/rng.hpp"
#include "ftnode/vecfield.hpp"

namespace ftnode {

/// Per-epoch step size: constant, or cosine decay from learning_rate towards 0.
enum class LrSchedule { constant, cosine };

inline std::string to_string(LrSchedule s) { return s == LrSchedule::constant ? "constant" : "cosine"; }

inline LrSchedule parse_lr_schedule(const std::string& s) {
  if (s == "constant") return LrSchedule::constant;
  if (s == "cosine") return LrSchedule::cosine;
  throw InvalidInput("unknown learning-rate schedule '" + s + "'");
}

struct TrainConfig {
  double gamma = 0.0;
  double delta = 0.05;
  double t1_reg = 2.0;
  double learning_rate = 1e-2;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 64;
  std::size_t epochs = 200;
  std::uint64_t seed = 1;
  std::optional<double> reg_dt;
  std::size_t threads = 1;
  std::size_t probe_resolution = 16;  // probe grid for mean lambda_max([0, T1])
  bool record_seconds = true;
  LrSchedule schedule = LrSchedule::cosine;
  double grad_clip = 1.0;  // global-norm clip of each batch gradient; 0 disables

  /// Step size used during `epoch` (1-based).
  double epoch_learning_rate(std::size_t epoch) const {
    if (schedule == LrSchedule::constant || epochs == 0) return learning_rate;
    const double frac = static_cast<double>(epoch - 1) / static_cast<double>(epochs);
    return 0.5 * learning_rate * (1.0 + std::cos(std::numbers::pi * frac));
  }

  void validate(const FlowConfig& flow) const {
    if (!(gamma >= 0.0)) throw InvalidInput("gamma must be nonnegative");
    if (batch_size < 1) throw InvalidInput("batch size must be at least 1");
    if (!(learning_rate > 0.0)) throw InvalidInput("learning rate must be positive");
    if (!(t1_reg > 0.0) || t1_reg > flow.t_end + 1e-12) throw InvalidInput("t1 must lie in (0, T]");
    reg_flow(flow).validate();
  }

  FlowConfig reg_flow(const FlowConfig& flow) const { return FlowConfig{reg_dt.value_or(flow.dt), t1_reg}; }
};

/// Flat gradient: field parameters in vecfield order, then the output weight
/// (row-major) and bias.
struct GradientBundle {
  std::vector<double> values;
  std::size_t field_size = 0;

  GradientBundle() = default;
  GradientBundle(std::size_t field_params, std::size_t output_params)
      : values(field_params + output_params, 0.0), field_size(field_params) {}

  template <VectorField F>
  static GradientBundle zeros_for(const NodeClassifier<F>& m) {
    return GradientBundle(m.field.num_params(), m.output.num_params());
  }

  std::span<double> field() { return std::span<double>(values).first(field_size); }
  std::span<const double> field() const { return std::span<const double>(values).first(field_size); }
  std::span<double> output_weight() { return std::span<double>(values).subspan(field_size, 4); }
  std::span<double> output_bias() { return std::span<double>(values).subspan(field_size + 4); }

  void add_scaled(const GradientBundle& other, double s) {
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += s * other.values[i];
  }
  void scale(double s) {
    for (double& v : values) v *= s;
  }
  bool all_zero() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
  }
};

template <VectorField F>
std::vector<double> flat_params(const NodeClassifier<F>& m) {
  std::vector<double> p(m.field.params().begin(), m.field.params().end());
  p.insert(p.end(), m.output.weight.data().begin(), m.output.weight.data().end());
  p.insert(p.end(), m.output.bias.begin(), m.output.bias.end());
  return p;
}

template <VectorField F>
void set_flat_params(NodeClassifier<F>& m, std::span<const double> p) {
  if (p.size() != m.num_params()) throw InvalidInput("parameter vector has wrong size");
  const std::size_t nf = m.field.num_params();
  std::copy_n(p.begin(), nf, m.field.params().begin());
  std::copy_n(p.begin() + nf, m.output.weight.size(), m.output.weight.data().begin());
  std::copy(p.begin() + nf + m.output.weight.size(), p.end(), m.output.bias.begin());
}

/// 1 for every scalar that training may change.
inline std::vector<unsigned char> trainable_flat_mask(const Classifier& m) {
  std::vector<unsigned char> mask(m.field.trainable_mask());
  mask.resize(m.num_params(), 1);
  return mask;
}

template <VectorField F>
std::vector<unsigned char> trainable_flat_mask(const NodeClassifier<F>& m) {
  return std::vector<unsigned char>(m.num_params(), 1);
}

// ---------------------------------------------------------------------------
// Forward quantities
// ---------------------------------------------------------------------------

inline double pred_from_output(std::span<const double> out) {
  const auto yb = label_of(ClassId::blue);
  const auto yo = label_of(ClassId::orange);
  const double db = std::hypot(out[0] - yb[0], out[1] - yb[1]);
  const double dor = std::hypot(out[0] - yo[0], out[1] - yo[1]);
  if (db + dor == 0.0) return 0.5;
  return dor / (db + dor);
}

template <VectorField F>
std::array<double, kLabelDim> model_output(const NodeClassifier<F>& m, std::span<const double> x0) {
  const Vec xT = flow_endpoint(m.field, x0, Interval{0.0, m.flow.t_end}, m.flow);
  return m.output.apply(xT);
}

template <VectorField F>
double predict(const NodeClassifier<F>& m, std::span<const double> x0) {
  const auto out = model_output(m, x0);
  return pred_from_output(out);
}

inline ClassId predicted_class(double pred) { return pred > 0.5 ? ClassId::blue : ClassId::orange; }

namespace detail {

template <class Fn>
auto with_sample_index(std::size_t i, Fn&& fn) {
  try {
    return fn();
  } catch (const Divergence& e) {
    throw Divergence(e.step(), "sample " + std::to_string(i) + ": " + e.what());
  }
}

}  // namespace detail

template <VectorField F>
double mse_loss(const NodeClassifier<F>& m, const Dataset& batch, std::size_t threads = 1) {
  if (batch.size() == 0) throw InvalidInput("empty batch");
  std::vector<double> err(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    err[i] = detail::with_sample_index(i, [&] {
      const auto out = model_output(m, batch.inputs[i]);
      const auto y = batch.label(i);
      return (out[0] - y[0]) * (out[0] - y[0]) + (out[1] - y[1]) * (out[1] - y[1]);
    });
  });
  return std::accumulate(err.begin(), err.end(), 0.0) / static_cast<double>(batch.size());
}

template <VectorField F>
double lambda_max(const F& field, std::span<const double> x0, const FlowConfig& reg_cfg) {
  const Interval iv{0.0, reg_cfg.t_end};
  const auto tf = tangent_flow(field, x0, iv, reg_cfg, false);
  return leading_exponent(svd(tf.final_jacobian), iv);
}

template <VectorField F>
double reg_term(const NodeClassifier<F>& m, std::span<const std::array<double, 2>> inputs, double delta,
                double t1_reg, std::optional<double> reg_dt = {}, std::size_t threads = 1) {
  if (inputs.empty()) throw InvalidInput("empty batch");
  const FlowConfig rc{reg_dt.value_or(m.flow.dt), t1_reg};
  rc.validate();
  std::vector<double> v(inputs.size());
  parallel_for(inputs.size(), threads, [&](std::size_t i) {
    v[i] = detail::with_sample_index(i, [&] { return std::max(lambda_max(m.field, inputs[i], rc), delta); });
  });
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(inputs.size());
}

// ---------------------------------------------------------------------------
// Reverse passes (per sample, accumulate into `grad`)
// ---------------------------------------------------------------------------

/// Adds d/dtheta of scale * |L Phi(T, x0) - y|^2 into grad; returns the squared error.
template <VectorField F>
double accumulate_mse_sample(const NodeClassifier<F>& m, std::span<const double> x0, std::array<double, 2> y,
                             double scale, GradientBundle& grad) {
  const std::size_t d = m.field.dim();
  const FlowConfig& cfg = m.flow;
  const Trajectory tr = flow(m.field, x0, Interval{0.0, cfg.t_end}, cfg);
  const std::size_t N = tr.size() - 1;
  const auto xT = tr.final_state();
  const auto out = m.output.apply(xT);
  const std::array<double, 2> r{out[0] - y[0], out[1] - y[1]};
  const double loss = r[0] * r[0] + r[1] * r[1];

  const std::array<double, 2> rbar{2.0 * scale * r[0], 2.0 * scale * r[1]};
  auto gw = grad.output_weight();
  auto gb = grad.output_bias();
  Vec xbar(d, 0.0);
  for (std::size_t a = 0; a < kLabelDim; ++a) {
    gb[a] += rbar[a];
    for (std::size_t c = 0; c < d; ++c) {
      gw[a * d + c] += rbar[a] * xT[c];
      xbar[c] += m.output.weight(a, c) * rbar[a];
    }
  }

  Vec ybar(d), xhat(d);
  auto gfield = grad.field();
  for (std::size_t n = N; n >= 1; --n) {
    for (std::size_t c = 0; c < d; ++c) ybar[c] = cfg.dt * xbar[c];
    std::fill(xhat.begin(), xhat.end(), 0.0);
    m.field.vjp(cfg.time(n - 1), tr.state(n - 1), ybar, {}, gfield, xhat);
    for (std::size_t c = 0; c < d; ++c) xbar[c] += xhat[c];
  }
  return loss;
}

struct RegSample {
  double lambda = 0.0;
  bool active = false;
  bool near_degenerate = false;
};

/// Adds d/dtheta of scale * max(lambda_max([0, T1], x0), delta) into grad.field().
template <VectorField F>
RegSample accumulate_reg_sample(const F& field, std::span<const double> x0, double delta,
                                const FlowConfig& reg_cfg, double scale, std::span<double> grad) {
  const std::size_t d = field.dim();
  const std::size_t dd = d * d;
  const double dt = reg_cfg.dt;
  const Interval iv{0.0, reg_cfg.t_end};
  const TangentFlowResult tf = tangent_flow(field, x0, iv, reg_cfg, true);
  const std::size_t N = tf.trajectory.size() - 1;
  const SvdResult s = svd(tf.final_jacobian);
  RegSample out;
  out.lambda = leading_exponent(s, iv);
  if (!(out.lambda > delta)) return out;
  out.active = true;
  const double s1 = s.singular_values[0];
  if (d > 1 && s1 - s.singular_values[1] < 1e-9 * s1) out.near_degenerate = true;

  // Ybar_N = scale * u1 v1^T / (T1 sigma1)
  std::vector<double> ybarY(dd), jbar(dd), jac(dd), tmp(dd);
  const double c = scale / (iv.length() * s1);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t q = 0; q < d; ++q) ybarY[r * d + q] = c * s.left_vectors(r, 0) * s.right_vectors(q, 0);

  Vec xbar(d, 0.0), ybar(d), xhat(d);
  for (std::size_t n = N; n >= 1; --n) {
    const auto xprev = tf.trajectory.state(n - 1);
    const double* Yprev = tf.flat_jacobians.data() + (n - 1) * dd;
    // Jbar = dt * Ybar_n * Y_{n-1}^T
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t q = 0; q < d; ++q) {
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k) acc += ybarY[r * d + k] * Yprev[q * d + k];
        jbar[r * d + q] = dt * acc;
      }
    for (std::size_t i = 0; i < d; ++i) ybar[i] = dt * xbar[i];
    std::fill(xhat.begin(), xhat.end(), 0.0);
    const double t = reg_cfg.time(n - 1);
    field.vjp(t, xprev, ybar, jbar, grad, xhat);
    // Ybar_{n-1} = (Id + dt J)^T Ybar_n
    field.jacobian(t, xprev, jac);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t q = 0; q < d; ++q) {
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k) acc += jac[k * d + r] * ybarY[k * d + q];
        tmp[r * d + q] = ybarY[r * d + q] + dt * acc;
      }
    ybarY.swap(tmp);
    for (std::size_t i = 0; i < d; ++i) xbar[i] += xhat[i];
  }
  return out;
}

namespace detail {

/// Per-sample gradients computed in parallel into private slots, then summed
/// in index order so the result does not depend on the worker count.
template <VectorField F, class SampleFn>
GradientBundle reduce_samples(const NodeClassifier<F>& m, std::size_t n, std::size_t threads, SampleFn&& fn) {
  std::vector<GradientBundle> slots(n, GradientBundle::zeros_for(m));
  parallel_for(n, threads, [&](std::size_t i) { with_sample_index(i, [&] { fn(i, slots[i]); return 0; }); });
  GradientBundle total = GradientBundle::zeros_for(m);
  for (const auto& g : slots) total.add_scaled(g, 1.0);
  return total;
}

}  // namespace detail

template <VectorField F>
GradientBundle grad_mse(const NodeClassifier<F>& m, const Dataset& batch, std::size_t threads = 1,
                        double* loss_out = nullptr) {
  if (batch.size() == 0) throw InvalidInput("empty batch");
  const double scale = 1.0 / static_cast<double>(batch.size());
  std::vector<double> losses(batch.size());
  GradientBundle g = detail::reduce_samples(m, batch.size(), threads, [&](std::size_t i, GradientBundle& slot) {
    losses[i] = accumulate_mse_sample(m, batch.inputs[i], batch.label(i), scale, slot);
  });
  if (loss_out) *loss_out = std::accumulate(losses.begin(), losses.end(), 0.0) * scale;
  return g;
}

struct RegGradient {
  GradientBundle grad;
  double value = 0.0;  // reg_term of the batch
  std::size_t active = 0;
  std::size_t near_degenerate = 0;
};

template <VectorField F>
RegGradient grad_reg(const NodeClassifier<F>& m, std::span<const std::array<double, 2>> inputs, double delta,
                     double t1_reg, std::optional<double> reg_dt = {}, std::size_t threads = 1) {
  if (inputs.empty()) throw InvalidInput("empty batch");
  const FlowConfig rc{reg_dt.value_or(m.flow.dt), t1_reg};
  rc.validate();
  const double scale = 1.0 / static_cast<double>(inputs.size());
  std::vector<RegSample> samples(inputs.size());
  RegGradient out;
  out.grad = detail::reduce_samples(m, inputs.size(), threads, [&](std::size_t i, GradientBundle& slot) {
    samples[i] = accumulate_reg_sample(m.field, inputs[i], delta, rc, scale, slot.field());
  });
  for (const auto& s : samples) {
    out.value += std::max(s.lambda, delta);
    out.active += s.active;
    out.near_degenerate += s.near_degenerate;
  }
  out.value *= scale;
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<double> m, v;
  std::uint64_t step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// Bias-corrected Adam descent step. Entries with mask 0 are left untouched.
inline void adam_step(std::span<double> params, std::span<const double> grad, AdamState& st,
                      const TrainConfig& cfg, std::span<const unsigned char> mask = {}) {
  if (params.size() != grad.size() || st.m.size() != params.size())
    throw InvalidInput("adam: size mismatch");
  ++st.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    st.m[i] = b1 * st.m[i] + (1.0 - b1) * grad[i];
    st.v[i] = b2 * st.v[i] + (1.0 - b2) * grad[i] * grad[i];
    const double mh = st.m[i] / c1;
    const double vh = st.v[i] / c2;
    params[i] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.adam_eps);
  }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  double mse = 0.0;
  double reg = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double mean_lmax_t1 = 0.0;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t near_degenerate_warnings = 0;
};

struct TrainResult {
  Classifier model;
  TrainLog log;
  bool diverged = false;
  std::string divergence_message;
};

template <VectorField F>
double accuracy(const NodeClassifier<F>& m, const Dataset& ds, std::size_t threads = 1) {
  if (ds.size() == 0) return 0.0;
  std::vector<unsigned char> ok(ds.size(), 0);
  parallel_for(ds.size(), threads, [&](std::size_t i) {
    try {
      ok[i] = predicted_class(predict(m, ds.inputs[i])) == ds.classes[i];
    } catch (const Divergence&) {
      ok[i] = 0;
    }
  });
  return static_cast<double>(std::accumulate(ok.begin(), ok.end(), std::size_t{0})) / static_cast<double>(ds.size());
}

/// Regular probe raster over [-2, 2]^2 used for the logged mean lambda_max([0, T1]).
inline std::vector<std::array<double, 2>> probe_points(std::size_t resolution) {
  GridSpec g;
  g.resolution = resolution;
  std::vector<std::array<double, 2>> pts;
  for (std::size_t j = 0; j < resolution; ++j)
    for (std::size_t i = 0; i < resolution; ++i) pts.push_back({g.x(i), g.y(j)});
  return pts;
}

/// lambda_max([0, T1]) per point; NaN where the flow diverges or degenerates.
template <VectorField F>
std::vector<double> probe_lambdas(const F& field, std::span<const std::array<double, 2>> pts, const FlowConfig& cfg,
                                  std::size_t threads = 1) {
  std::vector<double> v(pts.size(), kNaN);
  parallel_for(pts.size(), threads, [&](std::size_t i) {
    try {
      v[i] = lambda_max(field, pts[i], cfg);
    } catch (const Divergence&) {
    } catch (const DegenerateTangent&) {
    }
  });
  return v;
}

/// Mean of the finite entries (NaN if there are none), optionally floored at `floor`.
inline double finite_mean(std::span<const double> v, double floor = -std::numeric_limits<double>::infinity()) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double x : v)
    if (std::isfinite(x)) {
      sum += std::max(x, floor);
      ++n;
    }
  return n ? sum / static_cast<double>(n) : kNaN;
}

inline TrainResult train(Classifier model, const Dataset& train_set, const Dataset& test_set,
                         const TrainConfig& cfg) {
  if (train_set.size() == 0) throw InvalidInput("training set is empty");
  model.flow.validate();
  cfg.validate(model.flow);
  const FlowConfig reg_cfg = cfg.reg_flow(model.flow);
  const auto probes = probe_points(cfg.probe_resolution);
  const auto mask = trainable_flat_mask(model);

  TrainResult res;
  res.model = model;
  std::vector<double> params = flat_params(model);
  AdamState adam(params.size());
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t_start = std::chrono::steady_clock::now();
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double sq_sum = 0.0;
    TrainConfig step_cfg = cfg;
    step_cfg.learning_rate = cfg.epoch_learning_rate(epoch);
    try {
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
        const Dataset batch =
            subset(train_set, std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                       order.begin() + static_cast<std::ptrdiff_t>(stop)));
        double batch_loss = 0.0;
        GradientBundle g = grad_mse(model, batch, cfg.threads, &batch_loss);
        if (cfg.gamma > 0.0) {
          RegGradient rg = grad_reg(model, batch.inputs, cfg.delta, cfg.t1_reg, cfg.reg_dt, cfg.threads);
          res.log.near_degenerate_warnings += rg.near_degenerate;
          g.add_scaled(rg.grad, cfg.gamma);
        }
        if (cfg.grad_clip > 0.0) {
          double norm = 0.0;
          for (double v : g.values) norm += v * v;
          norm = std::sqrt(norm);
          if (norm > cfg.grad_clip) g.scale(cfg.grad_clip / norm);
        }
        sq_sum += batch_loss * static_cast<double>(batch.size());
        adam_step(params, g.values, adam, step_cfg, mask);
        if (!detail::all_finite(params)) throw Divergence(0, "non-finite parameters after update");
        set_flat_params(model, params);
      }
    } catch (const Divergence& e) {
      res.diverged = true;
      res.divergence_message = "epoch " + std::to_string(epoch) + ": " + e.what();
      return res;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mse = sq_sum / static_cast<double>(train_set.size());
    rec.train_acc = accuracy(model, train_set, cfg.threads);
    rec.test_acc = test_set.size() ? accuracy(model, test_set, cfg.threads) : kNaN;
    const auto lambdas = probe_lambdas(model.field, probes, reg_cfg, cfg.threads);
    rec.mean_lmax_t1 = finite_mean(lambdas);
    rec.reg = finite_mean(lambdas, cfg.delta);
    if (cfg.record_seconds)
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    res.log.epochs.push_back(rec);
    res.model = model;
  }
  return res;
}

inline void write_train_log(const TrainLog& log, std::ostream& os) {
  os << "epoch,mse,reg,train_acc,test_acc,mean_lmax_T1,seconds\n";
  os.precision(17);
  for (const auto& r : log.epochs)
    os << r.epoch << ',' << r.mse << ',' << r.reg << ',' << r.train_acc << ',' << r.test_acc << ','
       << r.mean_lmax_t1 << ',' << r.seconds << '\n';
}

inline void write_train_log(const TrainLog& log, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw InvalidInput("cannot open '" + path + "' for writing");
  write_train_log(log, os);
}

}  // namespace ftnode
